// `!(x > 0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod frame;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod realign;
pub mod scalar;
pub mod spectral;
pub mod diagnostics;
pub mod oracle;
pub mod synth;
pub mod bench;
pub mod verify;
