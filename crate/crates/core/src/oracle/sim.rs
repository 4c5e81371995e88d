//! Toy dual-encoder contrastive training with geometric monitoring.
//!
//! Paired inputs share a latent `z`; each modality sees `A_m z + c + o_m +
//! noise`, where `c` is a common offset and `o_m` a small modality offset.
//! Two linear encoders (optionally normalized) are trained with symmetric
//! InfoNCE by plain gradient descent, back-propagated by hand. From the
//! reference step on, a fixed probe set is decomposed in the frozen frame at
//! every logging step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::coupling::estimate_coupling;
use super::infonce::{grad_anchor, symmetric_infonce, ContrastiveBatch, Head};
use crate::error::{Error, Result};
use crate::frame::{
    build_frame, cob_drift, cosine_stability, decompose_gap, gamma_noise_angle, leakage_ratio, rho_align,
    ReferenceFrame,
};
use crate::io::EmbeddingSet;
use crate::linalg::{norm, Matrix};
use crate::realign::covariance_rows;
use crate::spectral::{condition_number, sin_largest_angle, sym_eig, tyler_shape, TylerOptions};
use crate::synth::{gaussian_matrix, geometric_spectrum, random_unit_vector};

/// Simulator settings; every field has a default, so a config file only
/// needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub latent_dim: usize,
    /// Latent variances, largest first; empty selects a geometric decay
    /// with condition number `latent_kappa`.
    pub latent_spectrum: Vec<f64>,
    pub latent_kappa: f64,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub probe_size: usize,
    pub log_every: usize,
    /// Reference step as a fraction of `steps` (rounded down to a logging
    /// step) unless `t0_step` is set.
    pub t0_fraction: f64,
    pub t0_step: Option<usize>,
    pub energy: f64,
    /// Logging steps averaged into Σ_U and Σ_V.
    pub window: usize,
    /// Norm of the input offset shared by both modalities.
    pub common_offset: f64,
    /// Norm of each modality's own input offset.
    pub modality_offset: f64,
    /// Scale of the per-modality latent perturbation; its variances decay
    /// geometrically with condition number `pair_noise_kappa`.
    pub pair_noise: f64,
    pub pair_noise_kappa: f64,
    /// Gain of the shared map that writes the latent perturbation directly
    /// into the embedding; couples V-side residuals to U-side ones.
    pub coupling: f64,
    /// Norm of each encoder's fixed (untrained) output offset, added after
    /// normalization.
    pub output_offset: f64,
    /// Input noise scale (anisotropic, condition number `noise_kappa`).
    pub input_noise: f64,
    pub noise_kappa: f64,
    pub ridge_lambda: f64,
    pub data_seed: u64,
    pub encoder_seed_x: u64,
    pub encoder_seed_y: u64,
    pub shared_encoder: bool,
    pub normalize_output: bool,
    pub head: Head,
    /// Average the per-sample leakage ratios instead of taking the leakage
    /// of the stacked probe gradient (the gradient of the mean loss).
    pub per_sample_gradients: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            latent_dim: 6,
            latent_spectrum: Vec::new(),
            latent_kappa: 1.0,
            input_dim: 64,
            embed_dim: 64,
            batch_size: 256,
            steps: 2000,
            temperature: 0.1,
            learning_rate: 0.05,
            probe_size: 2048,
            log_every: 20,
            t0_fraction: 0.4,
            t0_step: None,
            energy: 0.9,
            window: 20,
            common_offset: 0.0,
            modality_offset: 0.0,
            output_offset: 0.08,
            pair_noise: 0.3,
            coupling: 0.08,
            pair_noise_kappa: 1000.0,
            input_noise: 0.03,
            noise_kappa: 1.0,
            ridge_lambda: 1e-6,
            data_seed: 7,
            encoder_seed_x: 11,
            encoder_seed_y: 13,
            shared_encoder: false,
            normalize_output: true,
            head: Head::Dot,
            per_sample_gradients: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.latent_dim == 0 || self.input_dim == 0 || self.embed_dim < 2 {
            return bad("latent_dim, input_dim must be ≥ 1 and embed_dim ≥ 2".into());
        }
        if !self.latent_spectrum.is_empty() && self.latent_spectrum.len() != self.latent_dim {
            return bad(format!(
                "latent_spectrum has {} entries, latent_dim is {}",
                self.latent_spectrum.len(),
                self.latent_dim
            ));
        }
        if self.latent_spectrum.iter().any(|&v| !(v > 0.0)) {
            return bad("latent_spectrum entries must be positive".into());
        }
        if self.batch_size < 2 || self.probe_size < self.embed_dim + 1 {
            return bad("batch_size must be ≥ 2 and probe_size > embed_dim".into());
        }
        if self.steps == 0 || self.log_every == 0 || self.window == 0 {
            return bad("steps, log_every and window must be positive".into());
        }
        if !(self.temperature > 0.0) || !(self.learning_rate >= 0.0) {
            return bad("temperature must be positive and learning_rate non-negative".into());
        }
        if !(self.energy > 0.0 && self.energy <= 1.0) || !(0.0..=1.0).contains(&self.t0_fraction) {
            return bad("energy must lie in (0, 1] and t0_fraction in [0, 1]".into());
        }
        if self.t0_step.is_some_and(|t| t > self.steps) {
            return bad("t0_step exceeds steps".into());
        }
        if !(self.latent_kappa >= 1.0 && self.pair_noise >= 0.0 && self.coupling >= 0.0 && self.pair_noise_kappa >= 1.0 && self.input_noise >= 0.0 && self.output_offset >= 0.0 && self.noise_kappa >= 1.0 && self.ridge_lambda >= 0.0) {
            return bad(
                "noise levels, coupling, output_offset and ridge_lambda must be ≥ 0; latent_kappa, pair_noise_kappa and noise_kappa ≥ 1"
                    .into(),
            );
        }
        Ok(())
    }

    /// Reference step, a multiple of `log_every`.
    pub fn t0(&self) -> usize {
        let raw = self.t0_step.unwrap_or((self.t0_fraction * self.steps as f64) as usize);
        (raw / self.log_every) * self.log_every
    }

    fn latent_variances(&self) -> Vec<f64> {
        if self.latent_spectrum.is_empty() {
            geometric_spectrum(self.latent_dim, self.latent_kappa)
        } else {
            self.latent_spectrum.clone()
        }
    }
}

/// Fixed data distribution for one simulator run.
struct DataModel {
    latent_sd: Vec<f64>,
    pair_sd: Vec<f64>,
    map_x: Matrix<f64>,
    map_y: Matrix<f64>,
    /// Shared by both modalities: writes the pair perturbation straight into
    /// the embedding, on top of what the encoder produces.
    map_c: Matrix<f64>,
    offset_x: Vec<f64>,
    offset_y: Vec<f64>,
    noise_sd: Vec<f64>,
}

impl DataModel {
    fn new(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Self {
        let (k, p) = (cfg.latent_dim, cfg.input_dim);
        // orthonormal columns scaled so a unit latent has unit norm per input dim
        let scale = (p as f64 / k as f64).sqrt();
        let mut map = || -> Matrix<f64> {
            if k <= p {
                crate::synth::random_orthonormal(p, k, rng).scale(scale)
            } else {
                gaussian_matrix(p, k, rng).scale(1.0 / (k as f64).sqrt())
            }
        };
        let map_x = map();
        let map_y = map();
        let map_c = if k <= cfg.embed_dim {
            crate::synth::random_orthonormal(cfg.embed_dim, k, rng)
        } else {
            gaussian_matrix(cfg.embed_dim, k, rng).scale(1.0 / (k as f64).sqrt())
        }
        .scale(cfg.coupling);
        let common: Vec<f64> = random_unit_vector(p, rng).into_iter().map(|v| v * cfg.common_offset).collect();
        let ox = random_unit_vector(p, rng);
        let oy = random_unit_vector(p, rng);
        let offset = |o: Vec<f64>| -> Vec<f64> {
            common.iter().zip(o).map(|(&c, v)| c + v * cfg.modality_offset).collect()
        };
        DataModel {
            latent_sd: cfg.latent_variances().iter().map(|v| v.sqrt()).collect(),
            pair_sd: geometric_spectrum(k, cfg.pair_noise_kappa)
                .into_iter()
                .map(|v| v.sqrt() * cfg.pair_noise)
                .collect(),
            map_x,
            map_y,
            map_c,
            offset_x: offset(ox),
            offset_y: offset(oy),
            noise_sd: geometric_spectrum(p, cfg.noise_kappa)
                .into_iter()
                .map(|v| v.sqrt() * cfg.input_noise)
                .collect(),
        }
    }

    /// `n` paired inputs (rows).
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Pairs {
        let (k, p) = (self.latent_sd.len(), self.noise_sd.len());
        let mut z = Matrix::zeros(n, k);
        for i in 0..n {
            for (v, &s) in z.row_mut(i).iter_mut().zip(&self.latent_sd) {
                let g: f64 = StandardNormal.sample(rng);
                *v = g * s;
            }
        }
        let mut make = |map: &Matrix<f64>, off: &[f64]| {
            // each modality sees its own perturbation of the shared latent
            let mut zm = z.clone();
            for i in 0..n {
                for (v, &s) in zm.row_mut(i).iter_mut().zip(&self.pair_sd) {
                    let g: f64 = StandardNormal.sample(rng);
                    *v += g * s;
                }
            }
            let eps = zm.sub(&z).matmul(&self.map_c.transpose());
            let mut m = zm.matmul(&map.transpose());
            for i in 0..n {
                for ((v, &o), &s) in m.row_mut(i).iter_mut().zip(off).zip(&self.noise_sd) {
                    let g: f64 = StandardNormal.sample(rng);
                    *v += o + g * s;
                }
            }
            debug_assert_eq!(m.ncols(), p);
            (m, eps)
        };
        let (x, leak_x) = make(&self.map_x, &self.offset_x);
        let (y, leak_y) = make(&self.map_y, &self.offset_y);
        Pairs { x, y, leak_x, leak_y }
    }
}

struct Pairs {
    x: Matrix<f64>,
    y: Matrix<f64>,
    /// Output-side coupling terms, added after encoding.
    leak_x: Matrix<f64>,
    leak_y: Matrix<f64>,
}

/// Linear encoders and their training state.
pub struct Simulator {
    cfg: SimConfig,
    data: DataModel,
    batch_rng: ChaCha8Rng,
    w_x: Matrix<f64>,
    w_y: Matrix<f64>,
    bias_x: Vec<f64>,
    bias_y: Vec<f64>,
    probe: Pairs,
    step: usize,
    last_loss: f64,
}

/// Weights and the fixed output offset of one encoder.
fn init_encoder(d: usize, p: usize, offset: f64, seed: u64) -> (Matrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // orthonormal rows (or columns when d > p) keep the input spectrum intact
    let w = if p >= d {
        crate::synth::random_orthonormal(p, d, &mut rng).transpose()
    } else {
        crate::synth::random_orthonormal(d, p, &mut rng)
    };
    let bias = random_unit_vector(d, &mut rng).into_iter().map(|v| v * offset).collect();
    (w, bias)
}

/// Embeds input rows; returns outputs and pre-normalization norms.
fn encode(w: &Matrix<f64>, bias: &[f64], inputs: &Matrix<f64>, normalize: bool) -> (Matrix<f64>, Vec<f64>) {
    let mut u = inputs.matmul(&w.transpose());
    let mut norms = vec![1.0; u.nrows()];
    for (i, n) in norms.iter_mut().enumerate() {
        let r = u.row_mut(i);
        if normalize {
            *n = norm(r);
            r.iter_mut().for_each(|v| *v /= *n);
        }
        // the offset sits outside the normalization so it stays a constant shift
        crate::linalg::axpy(1.0, bias, r);
    }
    (u, norms)
}

/// Pulls `∂L/∂e` back through `e = u/‖u‖ + b`.
fn through_normalization(grad: &Matrix<f64>, e: &Matrix<f64>, bias: &[f64], norms: &[f64]) -> Matrix<f64> {
    let mut out = grad.clone();
    for i in 0..out.nrows() {
        let dir: Vec<f64> = e.row(i).iter().zip(bias).map(|(a, b)| a - b).collect();
        let c = crate::linalg::dot(&dir, grad.row(i));
        for (v, &ek) in out.row_mut(i).iter_mut().zip(&dir) {
            *v = (*v - c * ek) / norms[i];
        }
    }
    out
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model_rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        model_rng.set_stream(2);
        let data = DataModel::new(&cfg, &mut model_rng);
        let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        probe_rng.set_stream(0);
        let probe = data.sample(cfg.probe_size, &mut probe_rng);
        let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        batch_rng.set_stream(1);
        let (w_x, bias_x) = init_encoder(cfg.embed_dim, cfg.input_dim, cfg.output_offset, cfg.encoder_seed_x);
        let (w_y, bias_y) = if cfg.shared_encoder {
            (w_x.clone(), bias_x.clone())
        } else {
            init_encoder(cfg.embed_dim, cfg.input_dim, cfg.output_offset, cfg.encoder_seed_y)
        };
        Ok(Simulator {
            cfg,
            data,
            batch_rng,
            w_x,
            w_y,
            bias_x,
            bias_y,
            probe,
            step: 0,
            last_loss: f64::NAN,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Probe embeddings under the current encoders.
    pub fn probe_embeddings(&self) -> (Matrix<f64>, Matrix<f64>) {
        let n = self.cfg.normalize_output;
        let p = &self.probe;
        (
            encode(&self.w_x, &self.bias_x, &p.x, n).0.add(&p.leak_x),
            encode(&self.w_y, &self.bias_y, &p.y, n).0.add(&p.leak_y),
        )
    }

    /// One gradient-descent update on a fresh batch.
    pub fn step(&mut self) -> Result<f64> {
        let Pairs { x: xin, y: yin, leak_x, leak_y } = self.data.sample(self.cfg.batch_size, &mut self.batch_rng);
        let norm_out = self.cfg.normalize_output;
        let (ex, nx) = encode(&self.w_x, &self.bias_x, &xin, norm_out);
        let (ey, ny) = encode(&self.w_y, &self.bias_y, &yin, norm_out);
        let sl = symmetric_infonce(&ex.add(&leak_x), &ey.add(&leak_y), self.cfg.temperature, self.cfg.head)?;
        if !sl.loss.is_finite() {
            return Err(Error::Diverged { step: self.step });
        }
        let (gx, gy) = if norm_out {
            (
                through_normalization(&sl.grad_x, &ex, &self.bias_x, &nx),
                through_normalization(&sl.grad_y, &ey, &self.bias_y, &ny),
            )
        } else {
            (sl.grad_x, sl.grad_y)
        };
        let dwx = gx.t_matmul(&xin);
        let dwy = gy.t_matmul(&yin);
        let lr = self.cfg.learning_rate;
        if self.cfg.shared_encoder {
            self.w_x = self.w_x.sub(&dwx.add(&dwy).scale(lr));
            self.w_y = self.w_x.clone();
        } else {
            self.w_x = self.w_x.sub(&dwx.scale(lr));
            self.w_y = self.w_y.sub(&dwy.scale(lr));
        }
        if !self.w_x.is_finite() || !self.w_y.is_finite() {
            return Err(Error::Diverged { step: self.step });
        }
        self.step += 1;
        self.last_loss = sl.loss;
        Ok(sl.loss)
    }
}

/// One logged row of geometric statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    /// `sin θ(U_t, U)`.
    pub sin_theta: f64,
    pub leak_ref: f64,
    pub gamma_norm: f64,
    pub mean_gap_norm: f64,
    pub drift: f64,
    pub cosine_stability: f64,
    /// Window-averaged `Cov(δ)`.
    pub kappa_u: f64,
    /// Window-averaged Tyler shape of the V-side background `ζ − L̂δ`.
    pub kappa_v: f64,
    pub rho_align: f64,
    pub rho_degenerate: bool,
    pub gamma_noise_angle: f64,
    pub coupling_norm: f64,
}

impl TraceRow {
    /// `sin θ + ‖L̂‖`.
    pub fn leak_bound(&self) -> f64 {
        self.sin_theta + self.coupling_norm
    }

    fn finite(&self) -> bool {
        [
            self.loss,
            self.sin_theta,
            self.leak_ref,
            self.gamma_norm,
            self.mean_gap_norm,
            self.drift,
            self.cosine_stability,
            self.kappa_u,
            self.kappa_v,
            self.rho_align,
            self.gamma_noise_angle,
            self.coupling_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub config: SimConfig,
    pub t0: usize,
    pub rank: usize,
    pub frame: ReferenceFrame<f64>,
    pub rows: Vec<TraceRow>,
    /// How G_U was estimated.
    pub gradient_covariance: String,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Per-sample anchor gradients on the probe, taken in consecutive chunks of
/// `batch` pairs.
fn probe_gradients(ex: &Matrix<f64>, ey: &Matrix<f64>, batch: usize, tau: f64) -> Result<Matrix<f64>> {
    let (n, d) = (ex.nrows(), ex.ncols());
    let mut out = Matrix::zeros(n, d);
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let sel = |m: &Matrix<f64>| Matrix::from_vec(idx.len(), d, idx.iter().flat_map(|&i| m.row(i).to_vec()).collect());
        let b = ContrastiveBatch::new_unnormalized(sel(ex), sel(ey), tau)?;
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(&grad_anchor(&b, k)?);
        }
        start = end;
    }
    Ok(out)
}

fn summed_covariance(ex: &Matrix<f64>, ey: &Matrix<f64>) -> Matrix<f64> {
    covariance_rows(ex).add(&covariance_rows(ey))
}

fn kappa(m: &Matrix<f64>) -> Result<f64> {
    condition_number(&sym_eig(m)?.eigenvalues, crate::spectral::DEFAULT_EIG_FLOOR)
}

fn window_mean(buf: &[Matrix<f64>]) -> Matrix<f64> {
    let mut acc = buf[0].clone();
    for m in &buf[1..] {
        acc = acc.add(m);
    }
    acc.scale(1.0 / buf.len() as f64)
}

/// Trains the encoders and records the geometric trace from the reference
/// step on.
pub fn run_toy_training(config: &SimConfig) -> Result<TrainingTrace> {
    let mut sim = Simulator::new(config.clone())?;
    let cfg = sim.config().clone();
    let t0 = cfg.t0();
    let tyler = TylerOptions::default();
    let mut frame: Option<ReferenceFrame<f64>> = None;
    let mut gamma_t0: Vec<f64> = Vec::new();
    let mut gamma_prev: Vec<f64> = Vec::new();
    let mut win_u: Vec<Matrix<f64>> = Vec::new();
    let mut win_v: Vec<Matrix<f64>> = Vec::new();
    let mut rows = Vec::new();

    for step in 0..=cfg.steps {
        if step >= t0 && step % cfg.log_every == 0 {
            let (ex, ey) = sim.probe_embeddings();
            let sigma = summed_covariance(&ex, &ey);
            if frame.is_none() {
                let mut f = build_frame(&covariance_rows(&ex), &covariance_rows(&ey), cfg.energy)?;
                f.created_at_step = Some(step as u64);
                frame = Some(f);
            }
            let f = frame.as_ref().unwrap();
            let r = f.rank();
            let ut = sym_eig(&sigma)?.eigenvectors.columns_prefix(r);
            let sin_theta = sin_largest_angle(&f.basis_u, &ut)?;

            let xs = EmbeddingSet::from_matrix(ex.clone(), "x")?;
            let ys = EmbeddingSet::from_matrix(ey.clone(), "y")?;
            let gap = decompose_gap(&xs, &ys, f)?;
            if gamma_t0.is_empty() {
                gamma_t0 = gap.gamma.clone();
                gamma_prev = gap.gamma.clone();
            }
            let drift = cob_drift(&gap.gamma, &gamma_t0, 1e-8)?;
            let cos = cosine_stability(&gap.gamma, &gamma_prev).value;
            gamma_prev = gap.gamma.clone();

            let grads = probe_gradients(&ex, &ey, cfg.batch_size, cfg.temperature)?;
            let leak_ref = if cfg.per_sample_gradients {
                let mut s = 0.0;
                for (i, g) in grads.row_iter().enumerate() {
                    s += leakage_ratio(g, f).map_err(|e| e.at_row(i))?;
                }
                s / grads.nrows() as f64
            } else {
                // gradient of the mean loss w.r.t. all probe embeddings, as one vector
                let (mut num, mut den) = (0.0, 0.0);
                for g in grads.row_iter() {
                    let pv = f.project_v(g)?;
                    num += crate::linalg::dot(&pv, &pv);
                    den += crate::linalg::dot(g, g);
                }
                if !(den > 0.0) {
                    return Err(Error::degenerate("leak_ref: zero probe gradient"));
                }
                (num / den).sqrt()
            };
            let g_u = covariance_rows(&grads.matmul(&f.basis_u));
            let sigma_u = gap.sigma_u();
            let rho = rho_align(&sigma_u, &g_u)?;

            let zeta_v = gap.zeta_coords(f);
            let coupling = estimate_coupling(&gap.delta, &zeta_v, cfg.ridge_lambda)?;
            // Σ_V is the shape of the background left after removing L̂δ
            let background = zeta_v.sub(&gap.delta.matmul(&coupling.l_hat.transpose()));
            let shape = if zeta_v.ncols() > 0 {
                tyler_shape(&background, tyler)?.sigma_hat
            } else {
                Matrix::identity(1)
            };
            win_u.push(sigma_u);
            win_v.push(shape);
            if win_u.len() > cfg.window {
                win_u.remove(0);
                win_v.remove(0);
            }
            let angle = gamma_noise_angle(&gap.gamma, &gap.sigma_v())?;

            let row = TraceRow {
                step,
                loss: sim.last_loss(),
                sin_theta,
                leak_ref,
                gamma_norm: norm(&gap.gamma),
                mean_gap_norm: norm(&gap.mean_gap),
                drift,
                cosine_stability: cos,
                kappa_u: kappa(&window_mean(&win_u))?,
                kappa_v: kappa(&window_mean(&win_v))?,
                rho_align: rho.value,
                rho_degenerate: rho.degenerate,
                gamma_noise_angle: angle,
                coupling_norm: coupling.spectral_norm,
            };
            if !row.finite() && !(step == 0 && row.loss.is_nan()) {
                return Err(Error::Diverged { step });
            }
            log::debug!("sim step {step}: {row:?}");
            rows.push(row);
        }
        if step < cfg.steps {
            sim.step()?;
        }
    }
    let frame = frame.ok_or_else(|| Error::InvalidArgument("reference step never reached".into()))?;
    Ok(TrainingTrace {
        config: cfg,
        t0,
        rank: frame.rank(),
        frame,
        rows,
        gradient_covariance: "per-sample probe anchor gradients projected onto U (direct covariance)".into(),
    })
}

/// Terminal gap geometry of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalGap {
    /// `‖E[Δ]‖` on the probe.
    pub mean_gap_norm: f64,
    /// `‖γ‖` in a frame built from the terminal probe embeddings.
    pub gamma_norm: f64,
    pub final_loss: f64,
    /// Step at which training diverged, if it did.
    pub diverged_at: Option<usize>,
}

/// Trains without monitoring and measures the terminal gap.
pub fn terminal_gap(config: &SimConfig) -> Result<TerminalGap> {
    let mut sim = Simulator::new(config.clone())?;
    for _ in 0..config.steps {
        if let Err(e) = sim.step() {
            return match e {
                Error::Diverged { step } => Ok(TerminalGap {
                    mean_gap_norm: f64::NAN,
                    gamma_norm: f64::NAN,
                    final_loss: f64::NAN,
                    diverged_at: Some(step),
                }),
                other => Err(other),
            };
        }
    }
    let (ex, ey) = sim.probe_embeddings();
    let frame = build_frame(&covariance_rows(&ex), &covariance_rows(&ey), config.energy)?;
    let gap = decompose_gap(&EmbeddingSet::from_matrix(ex, "x")?, &EmbeddingSet::from_matrix(ey, "y")?, &frame)?;
    Ok(TerminalGap {
        mean_gap_norm: norm(&gap.mean_gap),
        gamma_norm: norm(&gap.gamma),
        final_loss: sim.last_loss(),
        diverged_at: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub runs: Vec<TerminalGap>,
    /// Means over runs that did not diverge.
    pub mean_gap_norm: f64,
    pub mean_gamma_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub baseline: AblationArm,
    pub shared_encoder: AblationArm,
    pub no_normalization: AblationArm,
    pub squared_distance_head: AblationArm,
}

impl AblationReport {
    /// Baseline `‖γ‖` over the shared-encoder arm's.
    pub fn shared_encoder_ratio(&self) -> f64 {
        self.baseline.mean_gamma_norm / self.shared_encoder.mean_gamma_norm
    }
}

fn seeded(config: &SimConfig, seed: u64) -> SimConfig {
    let mut c = config.clone();
    c.data_seed = config.data_seed.wrapping_add(seed.wrapping_mul(1_000_003));
    c.encoder_seed_x = config.encoder_seed_x.wrapping_add(seed.wrapping_mul(1_000_033));
    c.encoder_seed_y = config.encoder_seed_y.wrapping_add(seed.wrapping_mul(1_000_037));
    c
}

fn arm(name: &str, config: &SimConfig, seeds: &[u64], edit: impl Fn(&mut SimConfig)) -> Result<AblationArm> {
    let runs = seeds
        .iter()
        .map(|&s| {
            let mut c = seeded(config, s);
            edit(&mut c);
            terminal_gap(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let ok: Vec<&TerminalGap> = runs.iter().filter(|r| r.diverged_at.is_none()).collect();
    let mean = |f: fn(&TerminalGap) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    Ok(AblationArm {
        name: name.into(),
        mean_gap_norm: mean(|r| r.mean_gap_norm),
        mean_gamma_norm: mean(|r| r.gamma_norm),
        runs,
    })
}

/// Terminal gaps with each structural condition removed in turn, against
/// the unmodified configuration, averaged over `seeds`.
pub fn gap_necessity_ablation(config: &SimConfig, seeds: &[u64]) -> Result<AblationReport> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        baseline: arm("baseline", config, seeds, |_| {})?,
        shared_encoder: arm("shared_encoder", config, seeds, |c| c.shared_encoder = true)?,
        no_normalization: arm("no_normalization", config, seeds, |c| c.normalize_output = false)?,
        squared_distance_head: arm("squared_distance_head", config, seeds, |c| c.head = Head::NegSqDist)?,
    })
}
