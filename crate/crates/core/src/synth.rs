//! Seeded synthetic data: Gaussians with planted spectra, angular central
//! Gaussian samples and random orthogonal frames.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::io::EmbeddingSet;
use crate::linalg::{norm, Matrix};

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Haar-ish random orthogonal `d × k` basis (Gram–Schmidt of a Gaussian
/// matrix).
pub fn random_orthonormal<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Matrix<f64> {
    loop {
        if let Ok(q) = gaussian_matrix(d, k, rng).orthonormalize_columns() {
            return q;
        }
    }
}

pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `λ_i = κ^{-i/(d−1)}`, i = 0..d: largest 1, condition number `κ`.
pub fn geometric_spectrum(d: usize, kappa: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d).map(|i| kappa.powf(-(i as f64) / (d - 1) as f64)).collect()
}

/// `λ_k = k^{-α}`, k = 1..=d.
pub fn power_law_spectrum(d: usize, alpha: f64) -> Vec<f64> {
    (1..=d).map(|k| (k as f64).powf(-alpha)).collect()
}

/// `N(mean, Q diag(λ) Qᵀ)`.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    /// `Q diag(√λ)`, so a sample is `mean + factor · z`.
    pub factor: Matrix<f64>,
}

impl GaussianModel {
    pub fn new(mean: Vec<f64>, eigenvalues: &[f64], rotation: &Matrix<f64>) -> Self {
        let mut factor = rotation.clone();
        for j in 0..eigenvalues.len() {
            let c: Vec<f64> = factor.column(j).iter().map(|v| v * eigenvalues[j].sqrt()).collect();
            factor.set_column(j, &c);
        }
        GaussianModel { mean, factor }
    }

    /// Random rotation of the given spectrum.
    pub fn random<R: Rng + ?Sized>(mean: Vec<f64>, eigenvalues: &[f64], rng: &mut R) -> Self {
        let q = random_orthonormal(mean.len(), eigenvalues.len(), rng);
        Self::new(mean, eigenvalues, &q)
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> Matrix<f64> {
        self.factor.matmul(&self.factor.transpose())
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.factor.ncols()).map(|_| StandardNormal.sample(rng)).collect();
        crate::linalg::add(&self.mean, &self.factor.matvec(&z))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix<f64> {
        let d = self.dims();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(&self.sample_row(rng));
        }
        out
    }

    /// Samples projected onto the unit sphere.
    pub fn sample_unit<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix<f64> {
        normalize_rows(self.sample(n, rng))
    }

    pub fn sample_set<R: Rng + ?Sized>(&self, n: usize, unit: bool, modality: &str, rng: &mut R) -> Result<EmbeddingSet<f64>> {
        let m = if unit { self.sample_unit(n, rng) } else { self.sample(n, rng) };
        EmbeddingSet::from_matrix(m, modality)
    }
}

pub fn normalize_rows(mut m: Matrix<f64>) -> Matrix<f64> {
    for i in 0..m.nrows() {
        let r = m.row_mut(i);
        let n = norm(r);
        if n > 0.0 {
            r.iter_mut().for_each(|v| *v /= n);
        }
    }
    m
}

/// Angular central Gaussian samples with shape `Q diag(λ) Qᵀ`.
pub fn acg_samples<R: Rng + ?Sized>(n: usize, eigenvalues: &[f64], rotation: &Matrix<f64>, rng: &mut R) -> Matrix<f64> {
    let d = rotation.nrows();
    GaussianModel::new(vec![0.0; d], eigenvalues, rotation).sample_unit(n, rng)
}
