//! Symmetric eigenanalysis, subspace angles, robust shape estimation and
//! spectrum summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::scalar::Real;

/// Relative eigenvalue floor used for condition numbers.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-12;

/// Default fit range for power-law exponents (1-based, inclusive upper
/// bound clipped to the spectrum length).
pub const DEFAULT_ALPHA_KMIN: usize = 2;
pub const DEFAULT_ALPHA_KMAX: usize = 128;

fn symmetry_tol<T: Real>() -> T {
    T::of(1e-8).max(T::epsilon() * T::of(1e3))
}

/// `Σ = QΛQᵀ` with eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition<T> {
    pub eigenvalues: Vec<T>,
    /// Columns are eigenvectors; each column's largest-magnitude
    /// coordinate is positive.
    pub eigenvectors: Matrix<T>,
}

impl<T: Real> EigenDecomposition<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let q = &self.eigenvectors;
        let mut ql = q.clone();
        for i in 0..ql.nrows() {
            for (v, &l) in ql.row_mut(i).iter_mut().zip(&self.eigenvalues) {
                *v *= l;
            }
        }
        ql.matmul(&q.transpose())
    }

    /// Applies `f` to each eigenvalue and rebuilds `Q f(Λ) Qᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        EigenDecomposition {
            eigenvalues: self.eigenvalues.iter().map(|&l| f(l)).collect(),
            eigenvectors: self.eigenvectors.clone(),
        }
        .reconstruct()
    }
}

/// Eigendecomposition of a symmetric matrix.
pub fn sym_eig<T: Real>(sigma: &Matrix<T>) -> Result<EigenDecomposition<T>> {
    if !sigma.is_square() {
        return Err(Error::dims("sym_eig (square)", sigma.nrows(), sigma.ncols()));
    }
    if !sigma.is_finite() {
        return Err(Error::InvalidArgument("sym_eig: non-finite entries".into()));
    }
    let asym = sigma.asymmetry();
    if asym > symmetry_tol() {
        return Err(Error::NotSymmetric(asym.to_f64_lossless()));
    }
    let n = sigma.nrows();
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: Vec::new(),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let mut v = sigma.clone();
    v.symmetrize();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap_or(std::cmp::Ordering::Equal));
    let eigenvalues: Vec<T> = order.iter().map(|&i| d[i]).collect();
    let mut q = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        fix_sign(&mut col);
        q.set_column(dst, &col);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: q,
    })
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
pub(crate) fn fix_sign<T: Real>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < T::zero()) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

// Householder reduction to tridiagonal form (EISPACK tred2). On return `v`
// holds the accumulated orthogonal transform, `d` the diagonal and `e` the
// sub-diagonal in e[1..].
fn tridiagonalize<T: Real>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[(k, j)] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = T::zero();
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

// Implicit QL on the symmetric tridiagonal matrix (EISPACK tql2).
fn tridiagonal_ql<T: Real>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let two = T::of(2.0);
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 64 {
                    return Err(Error::degenerate("sym_eig: QL iteration did not converge"));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let vk1 = v[(k, i + 1)];
                        let vk = v[(k, i)];
                        v[(k, i + 1)] = s * vk + c * vk1;
                        v[(k, i)] = c * vk - s * vk1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// `Σ^{1/2}` of a symmetric PSD matrix (negative round-off clamped to 0).
pub fn sym_sqrt<T: Real>(sigma: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(sym_eig(sigma)?.map_spectrum(|l| l.max(T::zero()).sqrt()))
}

/// `Σ^{-1/2}` with eigenvalues floored at `floor_rel · λ_max`. Returns the
/// matrix and how many eigenvalues were raised to the floor.
pub fn sym_inv_sqrt<T: Real>(sigma: &Matrix<T>, floor_rel: T) -> Result<(Matrix<T>, usize)> {
    let eig = sym_eig(sigma)?;
    let lmax = eig.eigenvalues.first().copied().unwrap_or(T::zero());
    if lmax <= T::zero() {
        return Err(Error::degenerate("inverse square root of a zero matrix"));
    }
    let floor = floor_rel * lmax;
    let floored = eig.eigenvalues.iter().filter(|&&l| l < floor).count();
    Ok((eig.map_spectrum(|l| T::one() / l.max(floor).sqrt()), floored))
}

/// `κ = λ₁ / max(λ_min, ε·λ₁)`; an all-zero spectrum has κ = 1.
pub fn condition_number<T: Real>(eigenvalues: &[T], floor: T) -> Result<T> {
    let (&first, rest) = eigenvalues
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("condition number of an empty spectrum".into()))?;
    let lmax = rest.iter().fold(first, |m, &l| m.max(l));
    let lmin = rest.iter().fold(first, |m, &l| m.min(l));
    if lmax <= T::zero() {
        return Ok(T::one());
    }
    Ok(lmax / lmin.max(floor * lmax))
}

/// `exp(H(p))` with `p_k = λ_k / Σλ` (natural log).
pub fn effective_rank<T: Real>(eigenvalues: &[T]) -> Result<T> {
    let lmax = eigenvalues.iter().fold(T::zero(), |m, &l| m.max(l.abs()));
    if let Some(&neg) = eigenvalues.iter().find(|&&l| l < -T::of(1e-12) * lmax) {
        return Err(Error::InvalidArgument(format!(
            "effective rank needs a non-negative spectrum, found {neg}"
        )));
    }
    let total: T = eigenvalues.iter().map(|&l| l.max(T::zero())).sum();
    if total <= T::zero() {
        return Err(Error::InvalidArgument("effective rank of an all-zero spectrum".into()));
    }
    let mut h = T::zero();
    for &l in eigenvalues {
        let p = l.max(T::zero()) / total;
        if p > T::zero() {
            h -= p * p.ln();
        }
    }
    Ok(h.exp())
}

/// Power-law exponent `α` of `λ_k ∝ k^{-α}`, fitted by least squares on
/// `log λ_k` against `log k` for 1-based `k ∈ [k_min, k_max]`.
pub fn power_law_alpha<T: Real>(eigenvalues: &[T], k_min: usize, k_max: usize) -> Result<T> {
    if k_min == 0 || k_max > eigenvalues.len() || k_max < k_min || k_max - k_min + 1 < 3 {
        return Err(Error::InvalidArgument(format!(
            "power-law fit needs at least 3 points within 1..={}, got range {k_min}..={k_max}",
            eigenvalues.len()
        )));
    }
    let range = &eigenvalues[k_min - 1..k_max];
    if let Some(pos) = range.iter().position(|&l| !(l > T::zero())) {
        return Err(Error::InvalidArgument(format!(
            "power-law fit: non-positive eigenvalue at k = {}",
            k_min + pos
        )));
    }
    // log-ratios to the first point make the fit independent of global scale
    let anchor = range[0];
    let xs: Vec<T> = (k_min..=k_max).map(|k| T::of_usize(k).ln()).collect();
    let ys: Vec<T> = range.iter().map(|&l| (l / anchor).ln()).collect();
    let m = T::of_usize(xs.len());
    let xbar = xs.iter().copied().sum::<T>() / m;
    let ybar = ys.iter().copied().sum::<T>() / m;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        sxy += (x - xbar) * (y - ybar);
        sxx += (x - xbar) * (x - xbar);
    }
    Ok(-(sxy / sxx))
}

fn check_orthonormal<T: Real>(q: &Matrix<T>) -> Result<()> {
    let err = q.orthonormality_error();
    if !(err <= symmetry_tol()) {
        return Err(Error::NotOrthonormal(err.to_f64_lossless()));
    }
    Ok(())
}

fn check_pair<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::dims("principal angles (ambient dimension)", a.nrows(), b.nrows()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::dims("principal angles (rank)", a.ncols(), b.ncols()));
    }
    check_orthonormal(a)?;
    check_orthonormal(b)
}

/// Singular values (ascending, clamped to `[0, 1]`) by one-sided Jacobi.
///
/// Works on the columns directly rather than on `MᵀM`, so values near zero
/// keep absolute accuracy of order `ε‖M‖` instead of `√ε‖M‖`.
fn sorted_unit_singular_values<T: Real>(m: &Matrix<T>) -> Vec<T> {
    let mut cols: Vec<Vec<T>> = (0..m.ncols()).map(|j| m.column(j)).collect();
    let k = cols.len();
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == T::zero() || gamma.abs() <= T::epsilon() * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<T> = cols.iter().map(|c| norm(c).min(T::one())).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Principal angles (radians, ascending) between the column spans of two
/// orthonormal bases of equal rank.
///
/// Cosines come from the singular values of `AᵀB` and sines from those of
/// `(I − AAᵀ)B`; pairing them through `atan2` keeps small angles accurate.
pub fn principal_angles<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Vec<T>> {
    check_pair(a, b)?;
    let m = a.t_matmul(b);
    let mut cos = sorted_unit_singular_values(&m);
    cos.reverse();
    let resid = b.sub(&a.matmul(&m));
    let sin = sorted_unit_singular_values(&resid);
    Ok(cos
        .into_iter()
        .zip(sin)
        .map(|(c, s)| s.atan2(c))
        .collect())
}

/// `sin θ_max(A, B) = ‖(I − AAᵀ)B‖₂`.
pub fn sin_largest_angle<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    check_pair(a, b)?;
    let resid = b.sub(&a.matmul(&a.t_matmul(b)));
    Ok(sorted_unit_singular_values(&resid).last().copied().unwrap_or(T::zero()))
}

#[derive(Debug, Clone, Copy)]
pub struct TylerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TylerOptions {
    fn default() -> Self {
        TylerOptions {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

/// Robust shape estimate, normalized to `tr = d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ShapeEstimate<T> {
    pub sigma_hat: Matrix<T>,
    pub iterations: usize,
    pub converged: bool,
    /// An iterate was near-singular and received a ridge.
    pub regularized: bool,
}

/// Tyler's M-estimator of scatter shape (fixed-point iteration from `I`).
///
/// Samples are rows of `samples`, assumed centered. Each row is reduced to
/// its direction first, so the estimate ignores radial scale.
pub fn tyler_shape<T: Real>(samples: &Matrix<T>, opts: TylerOptions) -> Result<ShapeEstimate<T>> {
    let (n, d) = (samples.nrows(), samples.ncols());
    if n == 0 || d == 0 {
        return Err(Error::InsufficientSamples {
            context: "tyler_shape",
            needed: 1,
            actual: n,
        });
    }
    let mut dirs = Matrix::zeros(n, d);
    for i in 0..n {
        let row = samples.row(i);
        let nr = norm(row);
        if !(nr > T::zero()) {
            return Err(Error::Degenerate {
                stage: "tyler_shape: zero-norm sample",
                row: Some(i),
            });
        }
        for (o, &x) in dirs.row_mut(i).iter_mut().zip(row) {
            *o = x / nr;
        }
    }
    let dt = T::of_usize(d);
    let tol = T::of(opts.tol);
    let ridge = T::of(1e-12);
    let mut sigma = Matrix::identity(d);
    let mut regularized = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut w = vec![T::zero(); d];
    while iterations < opts.max_iter {
        iterations += 1;
        let chol = match sigma.cholesky() {
            Some(l) if l.diag().iter().all(|&p| p * p >= ridge * sigma.trace() / dt) => l,
            _ => {
                regularized = true;
                let mut reg = sigma.clone();
                reg.add_diag(ridge * sigma.trace() / dt);
                reg.cholesky()
                    .ok_or_else(|| Error::degenerate("tyler_shape: singular iterate"))?
            }
        };
        let mut next = Matrix::zeros(d, d);
        for v in dirs.row_iter() {
            // vᵀΣ⁻¹v = ‖L⁻¹v‖²
            for i in 0..d {
                let mut s = v[i];
                for k in 0..i {
                    s -= chol[(i, k)] * w[k];
                }
                w[i] = s / chol[(i, i)];
            }
            let q = dot(&w, &w);
            if !(q > T::zero()) {
                return Err(Error::degenerate("tyler_shape: zero Mahalanobis norm"));
            }
            let inv = T::one() / q;
            for i in 0..d {
                let a = v[i] * inv;
                let row = &mut next.row_mut(i)[i..];
                axpy(a, &v[i..], row);
            }
        }
        for i in 0..d {
            for j in 0..i {
                next[(i, j)] = next[(j, i)];
            }
        }
        let tr = next.trace();
        if !(tr > T::zero()) {
            return Err(Error::degenerate("tyler_shape: zero-trace iterate"));
        }
        let next = next.scale(dt / tr);
        let change = next.sub(&sigma).frobenius_norm() / sigma.frobenius_norm();
        sigma = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(ShapeEstimate {
        sigma_hat: sigma,
        iterations,
        converged,
        regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot2(deg: f64) -> Matrix<f64> {
        let t = deg.to_radians();
        Matrix::from_rows(&[vec![t.cos()], vec![t.sin()]])
    }

    #[test]
    fn diagonal_matrix_eigensystem() {
        let e = sym_eig(&Matrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors, Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        let id = sym_eig(&Matrix::<f64>::identity(5)).unwrap();
        assert!(id.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_asymmetric_and_non_finite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric(_))));
        let b = Matrix::from_rows(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]);
        assert!(sym_eig(&b).is_err());
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] has eigenpairs 3:(1,1)/√2 and 1:(1,-1)/√2
        let e = sym_eig(&Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]])).unwrap();
        assert!((e.eigenvalues[0] - 3.0f64).abs() < 1e-15);
        assert!((e.eigenvalues[1] - 1.0f64).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvectors[(0, 0)] - h).abs() < 1e-15);
        assert!((e.eigenvectors[(1, 0)] - h).abs() < 1e-15);
    }

    #[test]
    fn condition_number_rules() {
        assert_eq!(condition_number(&[1.0, 1.0, 1.0], 1e-12).unwrap(), 1.0);
        assert_eq!(condition_number(&[100.0, 1.0], 1e-12).unwrap(), 100.0);
        assert_eq!(condition_number(&[1.0, 0.0], 1e-12).unwrap(), 1e12);
        assert_eq!(condition_number(&[0.0, 0.0], 1e-12).unwrap(), 1.0);
        assert!(condition_number::<f64>(&[], 1e-12).is_err());
    }

    #[test]
    fn effective_rank_values() {
        assert!((effective_rank(&[1.0; 32]).unwrap() - 32.0f64).abs() < 1e-9);
        let mut one_hot = vec![0.0; 10];
        one_hot[0] = 1.0;
        assert_eq!(effective_rank(&one_hot).unwrap(), 1.0);
        // p = [1/2, 1/4, 1/4]: H = ln2/2 + ln4/2 = 1.5 ln 2, exp(H) = 2^{1.5}
        assert!((effective_rank(&[2.0, 1.0, 1.0]).unwrap() - 2f64.powf(1.5)).abs() < 1e-12);
        assert!((2f64.powf(1.5) - 2.8284).abs() < 1e-4);
        assert!(effective_rank(&[0.0, 0.0]).is_err());
        assert!(effective_rank(&[1.0, -0.5]).is_err());
    }

    #[test]
    fn power_law_fits_exact_spectra() {
        let lam: Vec<f64> = (1..=100).map(|k| (k as f64).powf(-2.0)).collect();
        assert!((power_law_alpha(&lam, 1, 100).unwrap() - 2.0).abs() < 1e-6);
        let lam: Vec<f64> = (1..=100).map(|k| 7.5 * (k as f64).powf(-1.33)).collect();
        assert!((power_law_alpha(&lam, 1, 100).unwrap() - 1.33).abs() < 1e-6);
        assert!(power_law_alpha(&lam, 1, 2).is_err());
        assert!(power_law_alpha(&lam, 1, 101).is_err());
        let mut bad = lam.clone();
        bad[4] = 0.0;
        assert!(power_law_alpha(&bad, 1, 10).is_err());
    }

    #[test]
    fn principal_angle_cases() {
        let e1 = rot2(0.0);
        let e2 = rot2(90.0);
        assert_eq!(principal_angles(&e1, &e1).unwrap(), vec![0.0]);
        let right = principal_angles(&e1, &e2).unwrap()[0];
        assert!((right - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let thirty = principal_angles(&e1, &rot2(30.0)).unwrap()[0];
        assert!((thirty - 30f64.to_radians()).abs() < 1e-10);
        assert!((sin_largest_angle(&e1, &rot2(30.0)).unwrap() - 0.5).abs() < 1e-15);
        let not_unit = Matrix::from_rows(&[vec![2.0], vec![0.0]]);
        assert!(matches!(principal_angles(&e1, &not_unit), Err(Error::NotOrthonormal(_))));
    }

    #[test]
    fn tyler_in_one_dimension_is_one() {
        let s = Matrix::from_rows(&[vec![3.0], vec![-0.2], vec![7.0]]);
        let est = tyler_shape(&s, TylerOptions::default()).unwrap();
        assert_eq!(est.sigma_hat, Matrix::from_rows(&[vec![1.0]]));
        assert!(est.converged);
    }

    #[test]
    fn tyler_rejects_zero_sample() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            tyler_shape(&s, TylerOptions::default()),
            Err(Error::Degenerate { row: Some(1), .. })
        ));
    }

    #[test]
    fn inverse_sqrt_floors_small_eigenvalues() {
        let (m, floored) = sym_inv_sqrt(&Matrix::from_diag(&[4.0, 1e-20]), 1e-6).unwrap();
        assert_eq!(floored, 1);
        assert!((m[(0, 0)] - 0.5f64).abs() < 1e-15);
        assert!((m[(1, 1)] - 1.0 / (4e-6f64).sqrt()).abs() < 1e-6);
    }
}
