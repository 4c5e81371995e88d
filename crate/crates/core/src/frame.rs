//! Frozen reference frame `ℝ^d = U ⊕ V` and the bias/residual decomposition
//! of paired gaps in that frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::linalg::{angle_between, dot, norm, sub, Matrix};
use crate::scalar::Real;
use crate::spectral::{sin_largest_angle, sym_eig};

pub const DEFAULT_ENERGY: f64 = 0.90;

/// Orthonormal basis of the task subspace `U` (and of its complement `V`),
/// frozen at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReferenceFrame<T> {
    /// `d × r`, columns orthonormal.
    pub basis_u: Matrix<T>,
    /// `d × (d − r)`, columns orthonormal and orthogonal to `basis_u`.
    pub basis_v: Matrix<T>,
    /// Full descending spectrum the frame was cut from (empty when the
    /// frame was built from an explicit basis).
    #[serde(default)]
    pub eigenvalues: Vec<T>,
    pub energy_threshold: T,
    #[serde(default)]
    pub created_at_step: Option<u64>,
}

impl<T: Real> ReferenceFrame<T> {
    /// Wraps an explicit orthonormal `d × r` basis, completing `V`.
    pub fn from_basis(basis_u: Matrix<T>) -> Result<Self> {
        let (d, r) = (basis_u.nrows(), basis_u.ncols());
        if r == 0 || r > d {
            return Err(Error::InvalidArgument(format!("frame rank must lie in 1..={d}, got {r}")));
        }
        let err = basis_u.orthonormality_error();
        if !(err <= T::of(1e-8).max(T::epsilon() * T::of(1e3))) {
            return Err(Error::NotOrthonormal(err.to_f64_lossless()));
        }
        // P_V has eigenvalue 1 exactly on V
        let mut pv = Matrix::identity(d).sub(&basis_u.matmul(&basis_u.transpose()));
        pv.symmetrize();
        let basis_v = sym_eig(&pv)?.eigenvectors.columns_prefix(d - r);
        Ok(ReferenceFrame {
            basis_u,
            basis_v,
            eigenvalues: Vec::new(),
            energy_threshold: T::one(),
            created_at_step: None,
        })
    }

    pub fn dims(&self) -> usize {
        self.basis_u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis_u.ncols()
    }

    /// Coordinates of `P_U v` in the `U` basis (`Bᵀv`).
    pub fn project_u(&self, v: &[T]) -> Result<Vec<T>> {
        self.check_dims(v.len())?;
        Ok(self.basis_u.t_matvec(v))
    }

    /// `P_V v = v − BBᵀv` in ambient coordinates.
    pub fn project_v(&self, v: &[T]) -> Result<Vec<T>> {
        self.check_dims(v.len())?;
        Ok(sub(v, &self.basis_u.matvec(&self.basis_u.t_matvec(v))))
    }

    /// Coordinates of `P_V v` in the `V` basis.
    pub fn v_coords(&self, v: &[T]) -> Result<Vec<T>> {
        self.check_dims(v.len())?;
        Ok(self.basis_v.t_matvec(v))
    }

    /// Ambient vector `B c` for `U`-coordinates `c`.
    pub fn lift_u(&self, coords: &[T]) -> Vec<T> {
        self.basis_u.matvec(coords)
    }

    pub fn lift_v(&self, coords: &[T]) -> Vec<T> {
        self.basis_v.matvec(coords)
    }

    fn check_dims(&self, n: usize) -> Result<()> {
        if n != self.dims() {
            return Err(Error::dims("frame projection", self.dims(), n));
        }
        Ok(())
    }
}

/// Builds the frame from the top eigenvectors of `Σ_x + Σ_y`, keeping the
/// smallest rank whose cumulative energy reaches `energy`.
pub fn build_frame<T: Real>(sigma_x: &Matrix<T>, sigma_y: &Matrix<T>, energy: T) -> Result<ReferenceFrame<T>> {
    if !(energy > T::zero() && energy <= T::one()) {
        return Err(Error::InvalidArgument(format!("energy threshold must lie in (0, 1], got {energy}")));
    }
    if sigma_x.nrows() != sigma_y.nrows() || sigma_x.ncols() != sigma_y.ncols() {
        return Err(Error::dims("build_frame", sigma_x.nrows(), sigma_y.nrows()));
    }
    let eig = sym_eig(&sigma_x.add(sigma_y))?;
    let r = energy_rank(&eig.eigenvalues, energy)?;
    let d = eig.eigenvalues.len();
    Ok(ReferenceFrame {
        basis_u: eig.eigenvectors.columns_prefix(r),
        basis_v: eig.eigenvectors.column_range(r, d),
        eigenvalues: eig.eigenvalues,
        energy_threshold: energy,
        created_at_step: None,
    })
}

/// Smallest `k` with `Σ_{i≤k} λ_i / Σλ ≥ energy`; near-ties resolve to the
/// smaller `k`.
pub fn energy_rank<T: Real>(eigenvalues: &[T], energy: T) -> Result<usize> {
    let total: T = eigenvalues.iter().map(|&l| l.max(T::zero())).sum();
    if !(total > T::zero()) {
        return Err(Error::degenerate("build_frame: zero total variance"));
    }
    let target = energy * total * (T::one() - T::of(1e-12));
    let mut cum = T::zero();
    for (k, &l) in eigenvalues.iter().enumerate() {
        cum += l.max(T::zero());
        if cum >= target {
            return Ok(k + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// Bias/residual split of paired gaps `Δᵢ = xᵢ − yᵢ` in a fixed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GapDecomposition<T> {
    /// `U`-coordinates of the mean gap.
    pub beta: Vec<T>,
    /// `P_V E[Δ]`, ambient coordinates.
    pub gamma: Vec<T>,
    /// `N × r` zero-mean `U` residuals, basis coordinates.
    pub delta: Matrix<T>,
    /// `N × d` zero-mean `V` residuals, ambient coordinates.
    pub zeta: Matrix<T>,
    pub mean_gap: Vec<T>,
}

impl<T: Real> GapDecomposition<T> {
    /// `Cov(δ)` (`r × r`).
    pub fn sigma_u(&self) -> Matrix<T> {
        covariance_of_centered(&self.delta)
    }

    /// `Cov(ζ)` in ambient coordinates (`d × d`).
    pub fn sigma_v(&self) -> Matrix<T> {
        covariance_of_centered(&self.zeta)
    }

    /// ζ expressed in `V` coordinates (`N × (d − r)`).
    pub fn zeta_coords(&self, frame: &ReferenceFrame<T>) -> Matrix<T> {
        self.zeta.matmul(&frame.basis_v)
    }

    /// Reassembles `Δᵢ` from its four parts.
    pub fn reconstruct(&self, frame: &ReferenceFrame<T>, i: usize) -> Vec<T> {
        let u = frame.lift_u(&crate::linalg::add(&self.beta, self.delta.row(i)));
        let v = crate::linalg::add(&self.gamma, self.zeta.row(i));
        crate::linalg::add(&u, &v)
    }
}

/// `XᵀX / N` for rows already centered.
pub(crate) fn covariance_of_centered<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let n = T::of_usize(x.nrows().max(1));
    let mut c = x.t_matmul(x).scale(T::one() / n);
    c.symmetrize();
    c
}

pub fn decompose_gap<T: Real>(
    paired_x: &EmbeddingSet<T>,
    paired_y: &EmbeddingSet<T>,
    frame: &ReferenceFrame<T>,
) -> Result<GapDecomposition<T>> {
    if paired_x.rows() != paired_y.rows() {
        return Err(Error::dims("decompose_gap (pair count)", paired_x.rows(), paired_y.rows()));
    }
    if paired_x.dims() != paired_y.dims() {
        return Err(Error::dims("decompose_gap (dims)", paired_x.dims(), paired_y.dims()));
    }
    if paired_x.dims() != frame.dims() {
        return Err(Error::dims("decompose_gap (frame dims)", frame.dims(), paired_x.dims()));
    }
    let n = paired_x.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            context: "decompose_gap",
            needed: 2,
            actual: n,
        });
    }
    let d = frame.dims();
    let mut gaps = Matrix::zeros(n, d);
    let mut mean_gap = vec![T::zero(); d];
    for i in 0..n {
        let row = gaps.row_mut(i);
        for ((g, &x), &y) in row.iter_mut().zip(paired_x.row(i)).zip(paired_y.row(i)) {
            *g = x - y;
        }
        for (m, &g) in mean_gap.iter_mut().zip(row.iter()) {
            *m += g;
        }
    }
    let nt = T::of_usize(n);
    for m in mean_gap.iter_mut() {
        *m /= nt;
    }
    let beta = frame.basis_u.t_matvec(&mean_gap);
    let gamma = sub(&mean_gap, &frame.lift_u(&beta));
    for i in 0..n {
        for (g, &m) in gaps.row_mut(i).iter_mut().zip(&mean_gap) {
            *g -= m;
        }
    }
    let delta = gaps.matmul(&frame.basis_u);
    let zeta = gaps.sub(&delta.matmul(&frame.basis_u.transpose()));
    Ok(GapDecomposition {
        beta,
        gamma,
        delta,
        zeta,
        mean_gap,
    })
}

/// `‖P_V g‖ / ‖g‖`.
pub fn leakage_ratio<T: Real>(g: &[T], frame: &ReferenceFrame<T>) -> Result<T> {
    let ng = norm(g);
    if !(ng > T::zero()) {
        return Err(Error::degenerate("leakage_ratio: zero gradient"));
    }
    Ok((norm(&frame.project_v(g)?) / ng).min(T::one()))
}

/// `sin θ(U_t, U)` for the largest principal angle.
pub fn geometric_baseline<T: Real>(frame: &ReferenceFrame<T>, basis_ut: &Matrix<T>) -> Result<T> {
    if basis_ut.ncols() != frame.rank() {
        return Err(Error::dims("geometric_baseline (rank)", frame.rank(), basis_ut.ncols()));
    }
    sin_largest_angle(&frame.basis_u, basis_ut)
}

/// `‖γ(t) − γ(t₀)‖ / max(‖γ(t₀)‖, ε)`.
pub fn cob_drift<T: Real>(gamma_t: &[T], gamma_t0: &[T], eps: T) -> Result<T> {
    if gamma_t.len() != gamma_t0.len() {
        return Err(Error::dims("cob_drift", gamma_t0.len(), gamma_t.len()));
    }
    Ok(norm(&sub(gamma_t, gamma_t0)) / norm(gamma_t0).max(eps))
}

/// A statistic that is undefined for some inputs; `degenerate` marks those
/// and `value` is then 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flagged<T> {
    pub value: T,
    pub degenerate: bool,
}

impl<T: Real> Flagged<T> {
    fn ok(value: T) -> Self {
        Flagged {
            value,
            degenerate: false,
        }
    }

    fn degenerate() -> Self {
        Flagged {
            value: T::zero(),
            degenerate: true,
        }
    }
}

/// Cosine between two vectors; zero vectors are flagged.
pub fn cosine_stability<T: Real>(gamma_t: &[T], gamma_prev: &[T]) -> Flagged<T> {
    let (a, b) = (norm(gamma_t), norm(gamma_prev));
    if gamma_t.len() != gamma_prev.len() || !(a > T::zero()) || !(b > T::zero()) {
        return Flagged::degenerate();
    }
    Flagged::ok((dot(gamma_t, gamma_prev) / (a * b)).max(-T::one()).min(T::one()))
}

/// Pearson correlation of the descending eigenvalue vectors of `Σ_U` and
/// `G_U`.
pub fn rho_align<T: Real>(sigma_u: &Matrix<T>, g_u: &Matrix<T>) -> Result<Flagged<T>> {
    if sigma_u.nrows() != g_u.nrows() {
        return Err(Error::dims("rho_align", sigma_u.nrows(), g_u.nrows()));
    }
    let a = sym_eig(sigma_u)?.eigenvalues;
    let b = sym_eig(g_u)?.eigenvalues;
    Ok(pearson(&a, &b))
}

/// Pearson correlation; constant inputs are flagged.
pub fn pearson<T: Real>(a: &[T], b: &[T]) -> Flagged<T> {
    let n = T::of_usize(a.len());
    if a.len() != b.len() || a.len() < 2 {
        return Flagged::degenerate();
    }
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let tiny = T::epsilon() * T::epsilon();
    let scale_a = a.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let scale_b = b.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    if saa <= tiny * scale_a * scale_a * n || sbb <= tiny * scale_b * scale_b * n {
        return Flagged::degenerate();
    }
    Flagged::ok((sab / (saa.sqrt() * sbb.sqrt())).max(-T::one()).min(T::one()))
}

/// Angle in degrees between `γ` and the principal eigenvector of `Σ_V`,
/// folded into [0°, 90°].
pub fn gamma_noise_angle<T: Real>(gamma: &[T], sigma_v: &Matrix<T>) -> Result<T> {
    if !(norm(gamma) > T::zero()) {
        return Err(Error::degenerate("gamma_noise_angle: zero gamma"));
    }
    if sigma_v.nrows() != gamma.len() {
        return Err(Error::dims("gamma_noise_angle", sigma_v.nrows(), gamma.len()));
    }
    let top = sym_eig(sigma_v)?.eigenvectors.column(0);
    let deg = angle_between(gamma, &top).to_degrees();
    Ok(if deg > T::of(90.0) { T::of(180.0) - deg } else { deg })
}
