//! Alignment quality metrics: centroid gap, cosine-similarity histograms and
//! their JS divergence, kNN mixing and overlap, phantom drift and the
//! sample-complexity curve.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::linalg::{angle_between, dot, norm, Matrix};
use crate::moments::stats_of;
use crate::realign::{estimate_realign, substitution_operator};
use crate::scalar::Real;
use crate::spectral::{condition_number, effective_rank, power_law_alpha, sym_eig, DEFAULT_ALPHA_KMAX, DEFAULT_ALPHA_KMIN};

pub const DEFAULT_BINS: usize = 201;
pub const DEFAULT_NUM_PAIRS: usize = 200_000;
pub const SMOOTHING_BANDWIDTH: usize = 2;
pub const DEFAULT_MIXING_K: usize = 20;
pub const DEFAULT_OVERLAP_K: usize = 10;

/// `‖μ_a − μ_b‖₂`.
pub fn modality_gap<T: Real>(mu_a: &[T], mu_b: &[T]) -> Result<T> {
    if mu_a.len() != mu_b.len() {
        return Err(Error::dims("modality_gap", mu_a.len(), mu_b.len()));
    }
    Ok(norm(&crate::linalg::sub(mu_a, mu_b)))
}

/// Distribution of pairwise cosines on a fixed grid over [−1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineHistogram {
    pub bin_edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub pair_count: u64,
    pub sampling_seed: u64,
    pub smoothed: bool,
}

fn uniform_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|k| -1.0 + 2.0 * k as f64 / bins as f64).collect()
}

impl CosineHistogram {
    /// Wraps explicit bin masses on a uniform grid over [−1, 1].
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::InvalidArgument("histogram masses must be non-negative and non-empty".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("histogram masses sum to {total}, not 1")));
        }
        Ok(CosineHistogram {
            bin_edges: uniform_edges(masses.len()),
            masses,
            pair_count: 0,
            sampling_seed: 0,
            smoothed: false,
        })
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Bin holding cosine `c` (the last bin is closed on the right).
    pub fn bin_of(&self, c: f64) -> usize {
        bin_index(c, self.bins())
    }
}

fn bin_index(c: f64, bins: usize) -> usize {
    let x = ((c.clamp(-1.0, 1.0) + 1.0) * 0.5 * bins as f64).floor();
    (x as usize).min(bins - 1)
}

/// Triangular kernel over ±`SMOOTHING_BANDWIDTH` bins, renormalized at the
/// edges so no mass leaves the grid.
fn smooth(masses: &[f64]) -> Vec<f64> {
    let h = SMOOTHING_BANDWIDTH as isize;
    let n = masses.len() as isize;
    let w = |k: isize| (h + 1 - k.abs()) as f64;
    let mut out = vec![0.0; masses.len()];
    for (i, &m) in masses.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let i = i as isize;
        let lo = (i - h).max(0);
        let hi = (i + h).min(n - 1);
        let total: f64 = (lo..=hi).map(|j| w(j - i)).sum();
        for j in lo..=hi {
            out[j as usize] += m * w(j - i) / total;
        }
    }
    out
}

/// Histogram of cosines between `num_pairs` seeded uniformly sampled
/// unordered pairs of distinct rows.
pub fn cosine_histogram<T: Real>(
    set: &EmbeddingSet<T>,
    num_pairs: usize,
    bins: usize,
    smoothing: bool,
    seed: u64,
) -> Result<CosineHistogram> {
    let n = set.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            context: "cosine_histogram",
            needed: 2,
            actual: n,
        });
    }
    if bins < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 bins, got {bins}")));
    }
    if num_pairs == 0 {
        return Err(Error::InvalidArgument("num_pairs must be positive".into()));
    }
    let norms: Vec<f64> = set.row_iter().map(|r| norm(r).to_f64_lossless()).collect();
    if let Some(i) = norms.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::degenerate("cosine_histogram: zero-norm row").at_row(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; bins];
    for _ in 0..num_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let c = dot(set.row(i), set.row(j)).to_f64_lossless() / (norms[i] * norms[j]);
        counts[bin_index(c, bins)] += 1;
    }
    let mut masses: Vec<f64> = counts.iter().map(|&c| c as f64 / num_pairs as f64).collect();
    if smoothing {
        masses = smooth(&masses);
    }
    Ok(CosineHistogram {
        bin_edges: uniform_edges(bins),
        masses,
        pair_count: num_pairs as u64,
        sampling_seed: seed,
        smoothed: smoothing,
    })
}

/// Jensen–Shannon divergence (natural log), in [0, ln 2].
pub fn js_divergence(p: &CosineHistogram, q: &CosineHistogram) -> Result<f64> {
    if p.bin_edges != q.bin_edges {
        return Err(Error::InvalidArgument("js_divergence: histograms use different bin grids".into()));
    }
    js_masses(&p.masses, &q.masses)
}

/// JS divergence of two mass vectors on the same grid.
pub fn js_masses(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims("js_divergence", p.len(), q.len()));
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / (0.5 * (x + y))).ln())
            .sum()
    };
    let js = 0.5 * (kl_to_mid(p, q) + kl_to_mid(q, p));
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// Indices of the `k` nearest rows of `points` to row `i` (self excluded,
/// squared Euclidean distance, ties to the lower index), nearest first.
fn knn_of<T: Real>(points: &Matrix<T>, i: usize, k: usize) -> (Vec<usize>, bool) {
    let q = points.row(i);
    let mut cand: Vec<(T, usize)> = (0..points.nrows())
        .filter(|&j| j != i)
        .map(|j| {
            let d = q.iter().zip(points.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
            (d, j)
        })
        .collect();
    let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    let dup = cand.first().is_some_and(|c| c.0 == T::zero());
    (cand.into_iter().map(|c| c.1).collect(), dup)
}

/// Neighbor lists for every row, plus how many rows have an exact duplicate.
pub fn knn_indices<T: Real>(points: &Matrix<T>, k: usize) -> Result<(Vec<Vec<usize>>, usize)> {
    if k == 0 || k >= points.nrows() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..{}, got {k}",
            points.nrows()
        )));
    }
    let res: Vec<(Vec<usize>, bool)> = (0..points.nrows()).into_par_iter().map(|i| knn_of(points, i, k)).collect();
    let dups = res.iter().filter(|r| r.1).count();
    Ok((res.into_iter().map(|r| r.0).collect(), dups))
}

fn stack<T: Real>(a: &EmbeddingSet<T>, b: &EmbeddingSet<T>) -> Result<Matrix<T>> {
    if a.dims() != b.dims() {
        return Err(Error::dims("knn pool", a.dims(), b.dims()));
    }
    let mut data = Vec::with_capacity(a.as_slice().len() + b.as_slice().len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Ok(Matrix::from_vec(a.rows() + b.rows(), a.dims(), data))
}

/// Mean fraction of each pooled point's `k` nearest neighbors that come
/// from the other set.
pub fn knn_mixing_rate<T: Real>(set_a: &EmbeddingSet<T>, set_b: &EmbeddingSet<T>, k: usize) -> Result<f64> {
    let pool = stack(set_a, set_b)?;
    if k >= pool.nrows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be smaller than the pooled size {}",
            pool.nrows()
        )));
    }
    let (nn, _) = knn_indices(&pool, k)?;
    let na = set_a.rows();
    let cross: usize = nn
        .iter()
        .enumerate()
        .map(|(i, list)| list.iter().filter(|&&j| (j < na) != (i < na)).count())
        .sum();
    Ok(cross as f64 / (k * pool.nrows()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnOverlap {
    pub overlap: f64,
    /// Rows of the reference set with an exact duplicate; neighbor sets are
    /// then tie-dependent.
    pub duplicate_points: usize,
}

/// Mean `|NN_k(before) ∩ NN_k(after)| / k` over index-aligned rows.
pub fn knn_overlap<T: Real>(before: &EmbeddingSet<T>, after: &EmbeddingSet<T>, k: usize) -> Result<KnnOverlap> {
    if before.rows() != after.rows() {
        return Err(Error::dims("knn_overlap (rows)", before.rows(), after.rows()));
    }
    if before.rows() <= k {
        return Err(Error::InsufficientSamples {
            context: "knn_overlap",
            needed: k + 1,
            actual: before.rows(),
        });
    }
    let (nb, dups) = knn_indices(&before.to_matrix(), k)?;
    let (na, _) = knn_indices(&after.to_matrix(), k)?;
    let shared: usize = nb
        .iter()
        .zip(&na)
        .map(|(x, y)| x.iter().filter(|i| y.contains(i)).count())
        .sum();
    if dups > 0 {
        log::warn!("knn_overlap: {dups} rows have exact duplicates");
    }
    Ok(KnnOverlap {
        overlap: shared as f64 / (k * before.rows()) as f64,
        duplicate_points: dups,
    })
}

/// Monte Carlo view of the spherical projection of `m + ζ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DriftReport<T> {
    /// `E[π(m + ζ)]`.
    pub mean_projection: Vec<T>,
    /// `‖E[π(m+ζ)] − π(m)‖`.
    pub drift_norm: T,
    /// Angle between `E[π(m+ζ)]` and `m`, degrees.
    pub drift_angle_deg: T,
    /// `E[(1/‖ζ‖)(I − ζζᵀ/‖ζ‖²)]`.
    pub mixing_matrix_a: Matrix<T>,
    pub samples: usize,
}

pub fn phantom_drift<T: Real>(m: &[T], zeta: &Matrix<T>) -> Result<DriftReport<T>> {
    let d = m.len();
    if zeta.ncols() != d {
        return Err(Error::dims("phantom_drift", d, zeta.ncols()));
    }
    let nm = norm(m);
    if !(nm > T::zero()) {
        return Err(Error::degenerate("phantom_drift: zero mean direction"));
    }
    if zeta.nrows() == 0 {
        return Err(Error::InsufficientSamples {
            context: "phantom_drift",
            needed: 1,
            actual: 0,
        });
    }
    let mut mean = vec![T::zero(); d];
    let mut a = Matrix::zeros(d, d);
    let mut inv_norm_sum = T::zero();
    for (i, z) in zeta.row_iter().enumerate() {
        let nz = norm(z);
        if !(nz > T::zero()) {
            return Err(Error::degenerate("phantom_drift: zero-norm residual sample").at_row(i));
        }
        let mut u: Vec<T> = m.iter().zip(z).map(|(&a, &b)| a + b).collect();
        let nu = norm(&u);
        if !(nu > T::zero()) {
            return Err(Error::degenerate("phantom_drift: m + ζ vanishes").at_row(i));
        }
        u.iter_mut().for_each(|v| *v /= nu);
        for (s, v) in mean.iter_mut().zip(&u) {
            *s += *v;
        }
        // −ζζᵀ/‖ζ‖³ accumulated in the upper triangle; identity part via inv_norm_sum
        let c = T::one() / (nz * nz * nz);
        let sl = a.as_mut_slice();
        for p in 0..d {
            let zp = z[p] * c;
            for q in p..d {
                sl[p * d + q] -= zp * z[q];
            }
        }
        inv_norm_sum += T::one() / nz;
    }
    let n = T::of_usize(zeta.nrows());
    mean.iter_mut().for_each(|v| *v /= n);
    for p in 0..d {
        for q in p..d {
            let v = a[(p, q)] / n + if p == q { inv_norm_sum / n } else { T::zero() };
            a.as_mut_slice()[p * d + q] = v;
            a.as_mut_slice()[q * d + p] = v;
        }
    }
    let pm: Vec<T> = m.iter().map(|&v| v / nm).collect();
    Ok(DriftReport {
        drift_norm: norm(&crate::linalg::sub(&mean, &pm)),
        drift_angle_deg: angle_between(&mean, m).to_degrees(),
        mean_projection: mean,
        mixing_matrix_a: a,
        samples: zeta.nrows(),
    })
}

/// Calibration pools and held-out evaluation sets for the curve.
pub struct CurveData<'a, T> {
    pub calib_src: &'a EmbeddingSet<T>,
    pub calib_tgt: &'a EmbeddingSet<T>,
    pub heldout_src: &'a EmbeddingSet<T>,
    pub heldout_tgt: &'a EmbeddingSet<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean_gap: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub std_gap: f64,
    pub gaps: Vec<f64>,
}

fn subsample<T: Real>(set: &EmbeddingSet<T>, n: usize, rng: &mut ChaCha8Rng) -> EmbeddingSet<T> {
    if n == set.rows() {
        return set.clone();
    }
    let mut idx = sample_indices(rng, set.rows(), n).into_vec();
    idx.sort_unstable();
    set.select_rows(&idx)
}

/// Held-out modality gap after ReAlign calibrated on `N` sampled rows of
/// each pool, for every `N` in `sizes` and `trials` seeded draws.
pub fn sample_complexity_curve<T: Real>(
    data: &CurveData<'_, T>,
    sizes: &[usize],
    trials: usize,
    eps: T,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if trials == 0 || sizes.is_empty() {
        return Err(Error::InvalidArgument("need at least one size and one trial".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::InvalidArgument("sizes must be positive and strictly ascending".into()));
    }
    let pool = data.calib_src.rows().min(data.calib_tgt.rows());
    let max = *sizes.last().unwrap();
    if max > pool {
        return Err(Error::InsufficientSamples {
            context: "sample_complexity_curve pool",
            needed: max,
            actual: pool,
        });
    }
    let tgt_mean: Vec<f64> = stats_of(data.heldout_tgt, false)?.mean;
    let jobs: Vec<(usize, usize)> = (0..sizes.len()).flat_map(|s| (0..trials).map(move |t| (s, t))).collect();
    let gaps: Vec<f64> = jobs
        .par_iter()
        .map(|&(si, t)| -> Result<f64> {
            let n = sizes[si];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((si as u64) << 32) | t as u64);
            let src = subsample(data.calib_src, n, &mut rng);
            let tgt = subsample(data.calib_tgt, n, &mut rng);
            let ss = crate::moments::stats_of(&src, false)?;
            let st = crate::moments::stats_of(&tgt, false)?;
            let cast = |s: crate::moments::ModalityStats<f64>| crate::moments::ModalityStats::<T> {
                mean: s.mean.iter().map(|&v| T::of(v)).collect(),
                trace: T::of(s.trace),
                covariance: None,
                n: s.n,
            };
            let stats = estimate_realign(&cast(ss), &cast(st), &src, eps)?;
            let aligned = substitution_operator(data.heldout_src, &stats)?;
            let mu = stats_of(&aligned, false)?.mean;
            modality_gap(&mu, &tgt_mean)
        })
        .collect::<Result<_>>()?;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(si, &n)| {
            let g = gaps[si * trials..(si + 1) * trials].to_vec();
            let mean = g.iter().sum::<f64>() / trials as f64;
            let std = if trials > 1 {
                (g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (trials - 1) as f64).sqrt()
            } else {
                0.0
            };
            CurvePoint {
                n,
                mean_gap: mean,
                std_gap: std,
                gaps: g,
            }
        })
        .collect())
}

/// Spectral summary of one set's covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub effective_rank: f64,
    pub condition_number: f64,
    /// `None` when the spectrum is too short for the default fit range.
    pub power_law_alpha: Option<f64>,
}

pub fn spectrum_summary<T: Real>(set: &EmbeddingSet<T>) -> Result<SpectrumSummary> {
    let stats = stats_of(set, true)?;
    let cov = stats.covariance.expect("covariance tracked");
    let eig = sym_eig(&cov)?.eigenvalues;
    let kmax = DEFAULT_ALPHA_KMAX.min(eig.iter().filter(|&&l| l > 1e-12 * eig[0]).count());
    Ok(SpectrumSummary {
        effective_rank: effective_rank(&eig)?,
        condition_number: condition_number(&eig, crate::spectral::DEFAULT_EIG_FLOOR)?,
        power_law_alpha: power_law_alpha(&eig, DEFAULT_ALPHA_KMIN, kmax).ok(),
        eigenvalues: eig,
    })
}

/// Knobs for [`diagnose`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub num_pairs: usize,
    pub bins: usize,
    pub smoothing: bool,
    pub mixing_k: usize,
    /// Rows per side used for kNN mixing (brute force is quadratic).
    pub mixing_sample: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            num_pairs: DEFAULT_NUM_PAIRS,
            bins: DEFAULT_BINS,
            smoothing: true,
            mixing_k: DEFAULT_MIXING_K,
            mixing_sample: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub modality_gap: f64,
    /// Natural log; range [0, ln 2].
    pub js_divergence: f64,
    pub knn_mixing_rate: f64,
    /// Pooled-neighbor definition: every point's k nearest neighbors in
    /// the union, self excluded.
    pub mixing_definition: String,
    pub spectrum_a: SpectrumSummary,
    pub spectrum_b: SpectrumSummary,
    pub histogram_a: CosineHistogram,
    pub histogram_b: CosineHistogram,
}

pub fn diagnose<T: Real>(a: &EmbeddingSet<T>, b: &EmbeddingSet<T>, opts: &DiagnoseOptions) -> Result<DiagnosticReport> {
    if a.dims() != b.dims() {
        return Err(Error::dims("diagnose", a.dims(), b.dims()));
    }
    let sa = stats_of(a, false)?;
    let sb = stats_of(b, false)?;
    let ha = cosine_histogram(a, opts.num_pairs, opts.bins, opts.smoothing, opts.seed)?;
    let hb = cosine_histogram(b, opts.num_pairs, opts.bins, opts.smoothing, opts.seed.wrapping_add(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ma = subsample(a, opts.mixing_sample.min(a.rows()), &mut rng);
    let mb = subsample(b, opts.mixing_sample.min(b.rows()), &mut rng);
    Ok(DiagnosticReport {
        modality_gap: modality_gap(&sa.mean, &sb.mean)?,
        js_divergence: js_divergence(&ha, &hb)?,
        knn_mixing_rate: knn_mixing_rate(&ma, &mb, opts.mixing_k)?,
        mixing_definition: "pooled".into(),
        spectrum_a: spectrum_summary(a)?,
        spectrum_b: spectrum_summary(b)?,
        histogram_a: ha,
        histogram_b: hb,
    })
}
