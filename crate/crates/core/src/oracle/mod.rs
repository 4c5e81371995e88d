//! Reference computations: contrastive loss gradients, U→V coupling and a
//! toy training simulator.

pub mod coupling;
pub mod infonce;
pub mod sim;

pub use coupling::{estimate_coupling, leakage_bound_check, moment_identity_check, CouplingEstimate, LeakageReport, MomentResiduals};
pub use infonce::{grad_anchor, grad_candidate, infonce_loss, symmetric_infonce, ContrastiveBatch, Head};
pub use sim::{gap_necessity_ablation, run_toy_training, AblationReport, SimConfig, TraceRow, TrainingTrace};
