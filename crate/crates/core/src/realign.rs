//! Training-free alignment operators: ReAlign (anchor, trace and centroid
//! alignment), blockwise whitening–coloring in a fixed frame, the
//! centroid-plus-isotropic-noise baseline and plain anchor shifting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{covariance_of_centered, ReferenceFrame};
use crate::io::EmbeddingSet;
use crate::linalg::{norm, Matrix};
use crate::moments::ModalityStats;
use crate::scalar::Real;
use crate::spectral::{sym_inv_sqrt, sym_sqrt};

pub const DEFAULT_EPS: f64 = 1e-8;
/// Post-step norms below this are treated as a collapse.
pub const DEGENERATE_NORM: f64 = 1e-12;
pub const DEFAULT_BLOCK_FLOOR: f64 = 1e-6;
pub const DEFAULT_C3_SIGMA: f64 = 0.04;

/// Calibrated ReAlign parameters; applying them is a pure per-row map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AlignmentStats<T> {
    pub mu_src: Vec<T>,
    pub mu_tgt: Vec<T>,
    pub trace_src: T,
    pub trace_tgt: T,
    pub s: T,
    pub eps: T,
    /// Mean of the first-normalized calibration outputs.
    pub mu_drift: Vec<T>,
    pub dims: usize,
    pub calib_n: u64,
}

impl<T: Real> AlignmentStats<T> {
    /// Stats with no drift calibration (`μ′ = 0`); mostly useful for tests and
    /// the anchor-only operator.
    pub fn uncalibrated(mu_src: Vec<T>, mu_tgt: Vec<T>, trace_src: T, trace_tgt: T, eps: T) -> Result<Self> {
        check_traces(trace_src, trace_tgt, eps)?;
        if mu_src.len() != mu_tgt.len() {
            return Err(Error::dims("alignment means", mu_tgt.len(), mu_src.len()));
        }
        let dims = mu_src.len();
        Ok(AlignmentStats {
            s: (trace_tgt / (trace_src + eps)).sqrt(),
            mu_drift: vec![T::zero(); dims],
            mu_src,
            mu_tgt,
            trace_src,
            trace_tgt,
            eps,
            dims,
            calib_n: 0,
        })
    }

    /// Structural consistency, used after loading from disk.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu_src", &self.mu_src), ("mu_tgt", &self.mu_tgt), ("mu_drift", &self.mu_drift)] {
            if v.len() != self.dims {
                return Err(Error::CorruptArtifact(format!("{name} has length {}, dims is {}", v.len(), self.dims)));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::CorruptArtifact(format!("{name} is not finite")));
            }
        }
        check_traces(self.trace_src, self.trace_tgt, self.eps)?;
        if !self.s.is_finite() {
            return Err(Error::CorruptArtifact("scale is not finite".into()));
        }
        Ok(())
    }
}

fn check_traces<T: Real>(trace_src: T, trace_tgt: T, eps: T) -> Result<()> {
    if !(eps >= T::zero()) {
        return Err(Error::InvalidArgument(format!("eps must be non-negative, got {eps}")));
    }
    if !(trace_tgt >= T::zero()) || !(trace_src >= T::zero()) {
        return Err(Error::CorruptArtifact(format!(
            "traces must be non-negative (source {trace_src}, target {trace_tgt})"
        )));
    }
    if !(trace_src + eps > T::zero()) {
        return Err(Error::degenerate("realign scale: zero source trace with eps = 0"));
    }
    Ok(())
}

/// All intermediate vectors of one ReAlign application.
#[derive(Debug, Clone, PartialEq)]
pub struct RealignStages<T> {
    /// `μ_x + s(e − μ_y)`.
    pub affine: Vec<T>,
    /// First spherical projection of `affine`.
    pub first_norm: Vec<T>,
    /// `first_norm − μ′ + μ_x`.
    pub recentered: Vec<T>,
    pub output: Vec<T>,
}

fn unit<T: Real>(v: Vec<T>, stage: &'static str) -> Result<Vec<T>> {
    let n = norm(&v);
    if !(n >= T::of(DEGENERATE_NORM)) {
        return Err(Error::degenerate(stage));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

fn check_len<T>(e: &[T], dims: usize, context: &'static str) -> Result<()> {
    if e.len() != dims {
        return Err(Error::dims(context, dims, e.len()));
    }
    Ok(())
}

fn affine<T: Real>(e: &[T], stats: &AlignmentStats<T>) -> Vec<T> {
    e.iter()
        .zip(&stats.mu_src)
        .zip(&stats.mu_tgt)
        .map(|((&v, &ms), &mt)| mt + stats.s * (v - ms))
        .collect()
}

fn first_stage<T: Real>(e: &[T], stats: &AlignmentStats<T>) -> Result<(Vec<T>, Vec<T>)> {
    let a = affine(e, stats);
    let p = unit(a.clone(), "realign first normalization")?;
    Ok((a, p))
}

pub fn realign_stages<T: Real>(e: &[T], stats: &AlignmentStats<T>) -> Result<RealignStages<T>> {
    check_len(e, stats.dims, "apply_realign")?;
    let (affine, first_norm) = first_stage(e, stats)?;
    let recentered: Vec<T> = first_norm
        .iter()
        .zip(&stats.mu_drift)
        .zip(&stats.mu_tgt)
        .map(|((&p, &md), &mt)| p - md + mt)
        .collect();
    let output = unit(recentered.clone(), "realign centroid correction")?;
    Ok(RealignStages {
        affine,
        first_norm,
        recentered,
        output,
    })
}

pub fn apply_realign<T: Real>(e: &[T], stats: &AlignmentStats<T>) -> Result<Vec<T>> {
    Ok(realign_stages(e, stats)?.output)
}

/// Computes the scale from the two traces and calibrates the drifted
/// centroid `μ′` on `calib_src`.
pub fn estimate_realign<T: Real>(
    stats_src: &ModalityStats<T>,
    stats_tgt: &ModalityStats<T>,
    calib_src: &EmbeddingSet<T>,
    eps: T,
) -> Result<AlignmentStats<T>> {
    if calib_src.is_empty() {
        return Err(Error::InsufficientSamples {
            context: "estimate_realign calibration set",
            needed: 1,
            actual: 0,
        });
    }
    check_len(&stats_tgt.mean, stats_src.dims(), "estimate_realign (target stats)")?;
    if calib_src.dims() != stats_src.dims() {
        return Err(Error::dims("estimate_realign (calibration set)", stats_src.dims(), calib_src.dims()));
    }
    let mut stats = AlignmentStats::uncalibrated(
        stats_src.mean.clone(),
        stats_tgt.mean.clone(),
        stats_src.trace,
        stats_tgt.trace,
        eps,
    )?;
    let mut sum = vec![T::zero(); stats.dims];
    for (i, row) in calib_src.row_iter().enumerate() {
        let (_, p) = first_stage(row, &stats).map_err(|e| e.at_row(i))?;
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let n = T::of_usize(calib_src.rows());
    stats.mu_drift = sum.into_iter().map(|s| s / n).collect();
    stats.calib_n = calib_src.rows() as u64;
    Ok(stats)
}

/// Row-wise map over a set, parallel over rows, order preserved. Errors carry
/// the offending row index.
fn map_rows<T: Real, F>(set: &EmbeddingSet<T>, out_dims: usize, f: F) -> Result<EmbeddingSet<T>>
where
    F: Fn(usize, &[T]) -> Result<Vec<T>> + Sync,
{
    let rows: Vec<Vec<T>> = set
        .row_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| f(i, r).map_err(|e| e.at_row(i)))
        .collect::<Result<_>>()?;
    let data: Vec<T> = rows.into_iter().flatten().collect();
    EmbeddingSet::new(set.rows(), out_dims, data, set.modality())
}

/// Batch ReAlign, `S_{y→x}` applied to every row.
pub fn substitution_operator<T: Real>(set: &EmbeddingSet<T>, stats: &AlignmentStats<T>) -> Result<EmbeddingSet<T>> {
    if set.dims() != stats.dims {
        return Err(Error::dims("substitution_operator", stats.dims, set.dims()));
    }
    map_rows(set, stats.dims, |_, r| apply_realign(r, stats))
}

/// `normalize(e − μ_y + μ_x)`.
pub fn apply_anchor_only<T: Real>(e: &[T], mu_src: &[T], mu_tgt: &[T]) -> Result<Vec<T>> {
    check_len(e, mu_src.len(), "anchor-only")?;
    check_len(mu_tgt, mu_src.len(), "anchor-only (target mean)")?;
    let v = e.iter().zip(mu_src).zip(mu_tgt).map(|((&v, &a), &b)| v - a + b).collect();
    unit(v, "anchor-only normalization")
}

pub fn anchor_only_batch<T: Real>(set: &EmbeddingSet<T>, mu_src: &[T], mu_tgt: &[T]) -> Result<EmbeddingSet<T>> {
    map_rows(set, set.dims(), |_, r| apply_anchor_only(r, mu_src, mu_tgt))
}

/// Isotropic-noise baseline for row `row` of a batch. The noise for a row is
/// drawn from ChaCha8 seeded with `seed` on stream `row`, so results do not
/// depend on batching or thread count.
pub fn c3_row<T: Real>(e: &[T], mu_src: &[T], mu_tgt: &[T], sigma: T, seed: u64, row: u64) -> Result<Vec<T>> {
    if !(sigma >= T::zero()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {sigma}")));
    }
    check_len(e, mu_src.len(), "c3 baseline")?;
    check_len(mu_tgt, mu_src.len(), "c3 baseline (target mean)")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    let v = e
        .iter()
        .zip(mu_src)
        .zip(mu_tgt)
        .map(|((&v, &a), &b)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v - a + b + sigma * T::of(z)
        })
        .collect();
    unit(v, "c3 normalization")
}

/// Single-vector form of [`c3_row`] (stream 0).
pub fn apply_c3_baseline<T: Real>(e: &[T], mu_src: &[T], mu_tgt: &[T], sigma: T, seed: u64) -> Result<Vec<T>> {
    c3_row(e, mu_src, mu_tgt, sigma, seed, 0)
}

pub fn c3_batch<T: Real>(set: &EmbeddingSet<T>, mu_src: &[T], mu_tgt: &[T], sigma: T, seed: u64) -> Result<EmbeddingSet<T>> {
    map_rows(set, set.dims(), |i, r| c3_row(r, mu_src, mu_tgt, sigma, seed, i as u64))
}

/// Calibrated blockwise whitening–coloring operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BlockwiseStats<T> {
    pub frame: ReferenceFrame<T>,
    /// `r × r`, frame coordinates.
    pub t_u: Matrix<T>,
    /// `(d−r) × (d−r)`, frame coordinates.
    pub t_v: Matrix<T>,
    pub mu_src: Vec<T>,
    pub mu_tgt: Vec<T>,
    /// Mean of the geometry-aligned calibration outputs.
    pub mu_drift: Vec<T>,
    pub eig_floor: T,
    /// Eigenvalues raised to the floor in each source block.
    pub floored_u: usize,
    pub floored_v: usize,
    pub calib_n: u64,
}

impl<T: Real> BlockwiseStats<T> {
    pub fn floor_triggered(&self) -> bool {
        self.floored_u + self.floored_v > 0
    }

    pub fn dims(&self) -> usize {
        self.frame.dims()
    }
}

/// Intermediate vectors of one blockwise application.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockwiseStages<T> {
    pub anchored: Vec<T>,
    /// `B T_U Bᵀẽ + C T_V Cᵀẽ` before normalization.
    pub transformed: Vec<T>,
    pub geometry: Vec<T>,
    pub output: Vec<T>,
}

fn anchored<T: Real>(e: &[T], mu_src: &[T], mu_tgt: &[T]) -> Result<Vec<T>> {
    let v = e.iter().zip(mu_src).zip(mu_tgt).map(|((&v, &a), &b)| v - a + b).collect();
    unit(v, "blockwise anchor normalization")
}

fn block_transform<T: Real>(a: &[T], frame: &ReferenceFrame<T>, t_u: &Matrix<T>, t_v: &Matrix<T>) -> Vec<T> {
    let cu = t_u.matvec(&frame.basis_u.t_matvec(a));
    let mut out = frame.basis_u.matvec(&cu);
    if frame.basis_v.ncols() > 0 {
        let cv = t_v.matvec(&frame.basis_v.t_matvec(a));
        for (o, v) in out.iter_mut().zip(frame.basis_v.matvec(&cv)) {
            *o += v;
        }
    }
    out
}

fn block_geometry<T: Real>(e: &[T], stats: &BlockwiseStats<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let a = anchored(e, &stats.mu_src, &stats.mu_tgt)?;
    let t = block_transform(&a, &stats.frame, &stats.t_u, &stats.t_v);
    let g = unit(t.clone(), "blockwise geometry normalization")?;
    Ok((a, t, g))
}

pub fn blockwise_stages<T: Real>(e: &[T], stats: &BlockwiseStats<T>) -> Result<BlockwiseStages<T>> {
    check_len(e, stats.dims(), "apply_blockwise")?;
    let (anchored, transformed, geometry) = block_geometry(e, stats)?;
    let re = geometry
        .iter()
        .zip(&stats.mu_drift)
        .zip(&stats.mu_tgt)
        .map(|((&g, &md), &mt)| g - md + mt)
        .collect();
    let output = unit(re, "blockwise centroid correction")?;
    Ok(BlockwiseStages {
        anchored,
        transformed,
        geometry,
        output,
    })
}

pub fn apply_blockwise<T: Real>(e: &[T], stats: &BlockwiseStats<T>) -> Result<Vec<T>> {
    Ok(blockwise_stages(e, stats)?.output)
}

pub fn blockwise_batch<T: Real>(set: &EmbeddingSet<T>, stats: &BlockwiseStats<T>) -> Result<EmbeddingSet<T>> {
    if set.dims() != stats.dims() {
        return Err(Error::dims("apply_blockwise", stats.dims(), set.dims()));
    }
    map_rows(set, stats.dims(), |_, r| apply_blockwise(r, stats))
}

fn mean_rows<T: Real>(m: &Matrix<T>) -> Vec<T> {
    let mut mu = vec![T::zero(); m.ncols()];
    for r in m.row_iter() {
        for (a, &v) in mu.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = T::of_usize(m.nrows().max(1));
    mu.iter_mut().for_each(|a| *a /= n);
    mu
}

/// Covariance of the rows of `m` (population normalization).
pub fn covariance_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mu = mean_rows(m);
    let mut c = m.clone();
    for i in 0..c.nrows() {
        for (v, &u) in c.row_mut(i).iter_mut().zip(&mu) {
            *v -= u;
        }
    }
    covariance_of_centered(&c)
}

/// `(Σ*)^{1/2} Σ_a^{-1/2}`; empty blocks give an empty transform.
fn whiten_color<T: Real>(src: &Matrix<T>, tgt: &Matrix<T>, floor: T) -> Result<(Matrix<T>, usize)> {
    if src.nrows() == 0 {
        return Ok((Matrix::zeros(0, 0), 0));
    }
    let (inv, floored) = sym_inv_sqrt(src, floor)?;
    Ok((sym_sqrt(tgt)?.matmul(&inv), floored))
}

/// Anchor-aligns the source onto the target mean, matches blockwise
/// covariances in the frame and calibrates the final centroid correction.
pub fn estimate_blockwise<T: Real>(
    frame: &ReferenceFrame<T>,
    calib_src: &EmbeddingSet<T>,
    calib_tgt: &EmbeddingSet<T>,
    eig_floor: T,
) -> Result<BlockwiseStats<T>> {
    let d = frame.dims();
    for (set, ctx) in [(calib_src, "estimate_blockwise (source)"), (calib_tgt, "estimate_blockwise (target)")] {
        if set.dims() != d {
            return Err(Error::dims(ctx, d, set.dims()));
        }
        if set.rows() < 2 {
            return Err(Error::InsufficientSamples {
                context: ctx,
                needed: 2,
                actual: set.rows(),
            });
        }
    }
    if !(eig_floor >= T::zero() && eig_floor < T::one()) {
        return Err(Error::InvalidArgument(format!("eigenvalue floor must lie in [0, 1), got {eig_floor}")));
    }
    let src = calib_src.to_matrix();
    let tgt = calib_tgt.to_matrix();
    let mu_src = mean_rows(&src);
    let mu_tgt = mean_rows(&tgt);

    let mut anchored_src = Matrix::zeros(src.nrows(), d);
    for i in 0..src.nrows() {
        let a = anchored(src.row(i), &mu_src, &mu_tgt).map_err(|e| e.at_row(i))?;
        anchored_src.row_mut(i).copy_from_slice(&a);
    }
    let (b, c) = (&frame.basis_u, &frame.basis_v);
    let (t_u, floored_u) = whiten_color(
        &covariance_rows(&anchored_src.matmul(b)),
        &covariance_rows(&tgt.matmul(b)),
        eig_floor,
    )?;
    let (t_v, floored_v) = whiten_color(
        &covariance_rows(&anchored_src.matmul(c)),
        &covariance_rows(&tgt.matmul(c)),
        eig_floor,
    )?;
    if floored_u + floored_v > 0 {
        log::warn!("blockwise: eigenvalue floor raised {floored_u} U and {floored_v} V eigenvalues");
    }

    let mut sum = vec![T::zero(); d];
    for i in 0..anchored_src.nrows() {
        let t = block_transform(anchored_src.row(i), frame, &t_u, &t_v);
        let g = unit(t, "blockwise geometry normalization").map_err(|e| e.at_row(i))?;
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    let n = T::of_usize(src.nrows());
    Ok(BlockwiseStats {
        frame: frame.clone(),
        t_u,
        t_v,
        mu_src,
        mu_tgt,
        mu_drift: sum.into_iter().map(|s| s / n).collect(),
        eig_floor,
        floored_u,
        floored_v,
        calib_n: src.nrows() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_identity(d: usize) -> AlignmentStats<f64> {
        AlignmentStats::uncalibrated(vec![0.0; d], vec![0.0; d], 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn scale_from_traces() {
        let s = AlignmentStats::uncalibrated(vec![0.0], vec![0.0], 1.0, 4.0, 0.0).unwrap();
        assert_eq!(s.s, 2.0);
        assert!(AlignmentStats::uncalibrated(vec![0.0], vec![0.0], 1.0, -1.0, 0.0).is_err());
        assert!(AlignmentStats::uncalibrated(vec![0.0], vec![0.0], 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn identity_configuration_renormalizes() {
        let out = apply_realign(&[3.0, 4.0], &stats_identity(2)).unwrap();
        assert_eq!(out, vec![0.6, 0.8]);
    }

    #[test]
    fn centered_point_maps_to_anchor_ray() {
        let mut st = AlignmentStats::uncalibrated(vec![0.1, 0.2], vec![0.0, 0.5], 0.3, 0.2, 1e-8).unwrap();
        st.mu_drift = vec![0.05, 0.3];
        let stages = realign_stages(&[0.1, 0.2], &st).unwrap();
        assert_eq!(stages.affine, vec![0.0, 0.5]);
        assert_eq!(stages.first_norm, vec![0.0, 1.0]);
        assert_eq!(stages.recentered, vec![-0.05, 1.2]);
        let n = (0.05f64 * 0.05 + 1.44).sqrt();
        assert!((stages.output[0] + 0.05 / n).abs() < 1e-15);
    }

    #[test]
    fn collapse_names_stage() {
        let st = AlignmentStats::uncalibrated(vec![1.0, 0.0], vec![0.0, 0.0], 1.0, 1.0, 0.0).unwrap();
        let err = apply_realign(&[1.0, 0.0], &st).unwrap_err();
        assert!(err.to_string().contains("first normalization"), "{err}");
        let set = EmbeddingSet::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], "y").unwrap();
        let err = substitution_operator(&set, &st).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn estimate_identical_stats() {
        let set = EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]], "y").unwrap();
        let st = crate::moments::stats_of(&set, false).unwrap();
        let a = estimate_realign(&st, &st, &set, 0.0).unwrap();
        assert_eq!(a.s, 1.0);
        assert!(norm(&a.mu_drift) < 1e-15);
        assert_eq!(a.calib_n, 4);
        let empty = EmbeddingSet::<f64>::empty(2, "y").unwrap();
        assert!(estimate_realign(&st, &st, &empty, 0.0).is_err());
    }

    #[test]
    fn substitution_matches_rowwise() {
        let set = EmbeddingSet::from_rows(&[vec![0.6, 0.8], vec![-0.8, 0.6], vec![0.0, -1.0]], "y").unwrap();
        let mut st = AlignmentStats::uncalibrated(vec![0.1, 0.1], vec![0.2, -0.1], 0.9, 0.5, 1e-8).unwrap();
        st.mu_drift = vec![0.1, 0.0];
        let batch = substitution_operator(&set, &st).unwrap();
        for i in 0..3 {
            assert_eq!(batch.row(i), apply_realign(set.row(i), &st).unwrap().as_slice());
        }
        let empty = EmbeddingSet::<f64>::empty(2, "y").unwrap();
        assert_eq!(substitution_operator(&empty, &st).unwrap().rows(), 0);
    }

    #[test]
    fn c3_is_seeded() {
        let e = [0.6, 0.8, 0.0];
        let z = [0.0; 3];
        assert_eq!(apply_c3_baseline(&e, &z, &z, 0.0, 1).unwrap(), vec![0.6, 0.8, 0.0]);
        let a = apply_c3_baseline(&e, &z, &z, 0.1, 9).unwrap();
        let b = apply_c3_baseline(&e, &z, &z, 0.1, 9).unwrap();
        let c = apply_c3_baseline(&e, &z, &z, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(apply_c3_baseline(&e, &z, &z, -0.1, 9).is_err());
    }

    #[test]
    fn anchor_only_shift() {
        let out = apply_anchor_only(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 1.0]);
    }

    #[test]
    fn one_dimensional_blocks() {
        // U = e1, V = e2; source variance 4 and target 1 per block.
        let frame = ReferenceFrame::from_basis(Matrix::from_rows(&[vec![1.0], vec![0.0]])).unwrap();
        let (t, _) = whiten_color(&Matrix::from_diag(&[4.0]), &Matrix::from_diag(&[1.0]), 1e-6).unwrap();
        assert_eq!(t.as_slice(), &[0.5]);
        let src = EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]], "a").unwrap();
        let bw = estimate_blockwise(&frame, &src, &src, 1e-6).unwrap();
        assert!(bw.t_u.sub(&Matrix::identity(1)).max_abs() < 1e-8);
        assert!(bw.t_v.sub(&Matrix::identity(1)).max_abs() < 1e-8);
        assert!(!bw.floor_triggered());
    }

    #[test]
    fn identity_blockwise_renormalizes() {
        let frame = ReferenceFrame::from_basis(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]])).unwrap();
        let stats = BlockwiseStats {
            t_u: Matrix::identity(2),
            t_v: Matrix::identity(1),
            mu_src: vec![0.0; 3],
            mu_tgt: vec![0.0; 3],
            mu_drift: vec![0.0; 3],
            eig_floor: 1e-6,
            floored_u: 0,
            floored_v: 0,
            calib_n: 0,
            frame,
        };
        let out = apply_blockwise(&[0.0, 0.6, 0.8], &stats).unwrap();
        assert!(norm(&crate::linalg::sub(&out, &[0.0, 0.6, 0.8])) < 1e-15);
        let mut diag = stats.clone();
        diag.t_u = Matrix::from_diag(&[2.0, 1.0]);
        let st = blockwise_stages(&[0.6, 0.8, 0.0], &diag).unwrap();
        assert!(norm(&crate::linalg::sub(&st.transformed, &[1.2, 0.8, 0.0])) < 1e-15);
        let n = (1.44f64 + 0.64).sqrt();
        assert!((st.output[0] - 1.2 / n).abs() < 1e-15);
    }
}
