//! Weak U→V coupling: ridge estimate of `ζ ≈ Lδ`, the leakage bound with
//! an extra coupling term, and the second-moment identities of the planted
//! model `ζ = Lδ + ξ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{leakage_ratio, ReferenceFrame};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::spectral::{sin_largest_angle, sym_eig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CouplingEstimate<T> {
    /// `(d−r) × r`.
    pub l_hat: Matrix<T>,
    pub spectral_norm: T,
    pub r_squared: T,
    pub ridge_lambda: T,
    /// Inputs had nonzero column means and were centered first.
    pub centered: bool,
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &Matrix<T>) -> Result<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(T::zero());
    }
    let gram = if m.nrows() >= m.ncols() { m.t_matmul(m) } else { m.matmul(&m.transpose()) };
    let top = sym_eig(&gram)?.eigenvalues[0];
    Ok(top.max(T::zero()).sqrt())
}

fn center<T: Real>(m: &Matrix<T>) -> (Matrix<T>, bool) {
    let n = T::of_usize(m.nrows().max(1));
    let mut mean = vec![T::zero(); m.ncols()];
    for r in m.row_iter() {
        for (a, &v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let scale = m.max_abs().max(T::min_positive_value());
    if mean.iter().all(|&v| v.abs() <= T::of(1e-10) * scale) {
        return (m.clone(), false);
    }
    let mut c = m.clone();
    for i in 0..c.nrows() {
        for (v, &u) in c.row_mut(i).iter_mut().zip(&mean) {
            *v -= u;
        }
    }
    (c, true)
}

/// Ridge regression of ζ on δ (rows are samples):
/// `L̂ = ZᵀD (DᵀD + λI)⁻¹` and `R² = 1 − ‖Z − DL̂ᵀ‖²/‖Z‖²`.
pub fn estimate_coupling<T: Real>(delta: &Matrix<T>, zeta: &Matrix<T>, lambda: T) -> Result<CouplingEstimate<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidArgument(format!("ridge lambda must be non-negative, got {lambda}")));
    }
    if delta.nrows() != zeta.nrows() {
        return Err(Error::dims("estimate_coupling (samples)", delta.nrows(), zeta.nrows()));
    }
    let (n, r) = (delta.nrows(), delta.ncols());
    if n < r.max(1) {
        return Err(Error::InsufficientSamples {
            context: "estimate_coupling",
            needed: r.max(1),
            actual: n,
        });
    }
    let (d, cd) = center(delta);
    let (z, cz) = center(zeta);
    if cd || cz {
        log::debug!("estimate_coupling: centered non-zero-mean inputs");
    }
    let mut gram = d.t_matmul(&d);
    gram.add_diag(lambda);
    gram.symmetrize();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::degenerate("estimate_coupling: DᵀD + λI is singular"))?;
    let dz = d.t_matmul(&z); // r × (d−r)
    let mut lt = Matrix::zeros(r, z.ncols());
    for k in 0..z.ncols() {
        lt.set_column(k, &chol.cholesky_solve(&dz.column(k)));
    }
    let l_hat = lt.transpose();
    let zn = z.frobenius_norm();
    let r_squared = if zn > T::zero() {
        let resid = z.sub(&d.matmul(&lt)).frobenius_norm();
        T::one() - (resid / zn) * (resid / zn)
    } else {
        T::zero()
    };
    Ok(CouplingEstimate {
        spectral_norm: spectral_norm(&l_hat)?,
        l_hat,
        r_squared,
        ridge_lambda: lambda,
        centered: cd || cz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub samples: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Largest `ratio − bound` (negative when every sample is inside).
    pub max_excess: f64,
    pub sin_theta: f64,
    pub coupling_norm: f64,
    pub tolerance: f64,
}

/// Counts gradients whose leakage exceeds `sin θ(U_t, U) + ‖L‖ + tol`.
pub fn leakage_bound_check<T: Real>(
    g_samples: &Matrix<T>,
    frame: &ReferenceFrame<T>,
    basis_ut: &Matrix<T>,
    coupling_norm: T,
    tol: T,
) -> Result<LeakageReport> {
    let sin = sin_largest_angle(&frame.basis_u, basis_ut)?;
    let bound = sin + coupling_norm;
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for (i, g) in g_samples.row_iter().enumerate() {
        let ratio = leakage_ratio(g, frame).map_err(|e| e.at_row(i))?;
        let excess = (ratio - bound).to_f64_lossless();
        max_excess = max_excess.max(excess);
        if ratio > bound + tol {
            violations += 1;
        }
    }
    let samples = g_samples.nrows();
    Ok(LeakageReport {
        samples,
        violations,
        violation_fraction: if samples > 0 { violations as f64 / samples as f64 } else { 0.0 },
        max_excess,
        sin_theta: sin.to_f64_lossless(),
        coupling_norm: coupling_norm.to_f64_lossless(),
        tolerance: tol.to_f64_lossless(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentResiduals {
    /// `‖E[δζᵀ] − Σ_U Lᵀ‖_F`.
    pub cross_residual: f64,
    /// Relative to `‖Σ_U Lᵀ‖_F` (infinite when that is zero and the residual is not).
    pub cross_relative: f64,
    /// `‖Cov(ζ) − (Σ_V + LΣ_U Lᵀ)‖_F`.
    pub cov_residual: f64,
    pub cov_relative: f64,
}

fn rel(res: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        res / scale
    } else if res == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Empirical check of `E[δζᵀ] = Σ_U Lᵀ` and `Cov(ζ) = Σ_V + LΣ_U Lᵀ`.
/// `Σ_U` is the empirical second moment of δ; `Σ_V` is taken from
/// `sigma_v` or, if absent, estimated as the second moment of `ζ − Lδ`.
pub fn moment_identity_check<T: Real>(
    delta: &Matrix<T>,
    zeta: &Matrix<T>,
    l: &Matrix<T>,
    sigma_v: Option<&Matrix<T>>,
) -> Result<MomentResiduals> {
    let n = delta.nrows();
    if zeta.nrows() != n {
        return Err(Error::dims("moment_identity_check (samples)", n, zeta.nrows()));
    }
    if l.nrows() != zeta.ncols() || l.ncols() != delta.ncols() {
        return Err(Error::dims("moment_identity_check (coupling shape)", zeta.ncols(), l.nrows()));
    }
    if n == 0 {
        return Err(Error::InsufficientSamples {
            context: "moment_identity_check",
            needed: 1,
            actual: 0,
        });
    }
    let inv = T::one() / T::of_usize(n);
    let sigma_u = delta.t_matmul(delta).scale(inv);
    let cross = delta.t_matmul(zeta).scale(inv);
    let cross_pred = sigma_u.matmul(&l.transpose());
    let cov_z = zeta.t_matmul(zeta).scale(inv);
    let sv = match sigma_v {
        Some(s) => s.clone(),
        None => {
            let xi = zeta.sub(&delta.matmul(&l.transpose()));
            xi.t_matmul(&xi).scale(inv)
        }
    };
    let cov_pred = sv.add(&l.matmul(&sigma_u).matmul(&l.transpose()));
    let cr = cross.sub(&cross_pred).frobenius_norm().to_f64_lossless();
    let vr = cov_z.sub(&cov_pred).frobenius_norm().to_f64_lossless();
    Ok(MomentResiduals {
        cross_residual: cr,
        cross_relative: rel(cr, cross_pred.frobenius_norm().to_f64_lossless()),
        cov_residual: vr,
        cov_relative: rel(vr, cov_pred.frobenius_norm().to_f64_lossless()),
    })
}
