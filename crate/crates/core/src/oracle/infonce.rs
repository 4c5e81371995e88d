//! InfoNCE loss and its closed-form gradients.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Real;

/// Paired minibatch: row `i` of `anchors` is matched with row `i` of
/// `candidates`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<T> {
    anchors: Matrix<T>,
    candidates: Matrix<T>,
    temperature: T,
}

impl<T: Real> ContrastiveBatch<T> {
    /// Checks shapes, `τ > 0` and unit-norm rows (within 1e−9).
    pub fn new(anchors: Matrix<T>, candidates: Matrix<T>, temperature: T) -> Result<Self> {
        let b = Self::new_unnormalized(anchors, candidates, temperature)?;
        for (name, m) in [("anchor", &b.anchors), ("candidate", &b.candidates)] {
            for (i, r) in m.row_iter().enumerate() {
                if (norm(r) - T::one()).abs() > T::of(1e-9) {
                    return Err(Error::InvalidArgument(format!("{name} row {i} is not unit-norm")));
                }
            }
        }
        Ok(b)
    }

    /// Like [`ContrastiveBatch::new`] without the unit-norm check; the
    /// formulas hold for arbitrary vectors (finite-difference checks perturb
    /// off the sphere).
    pub fn new_unnormalized(anchors: Matrix<T>, candidates: Matrix<T>, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
        }
        if anchors.nrows() != candidates.nrows() {
            return Err(Error::dims("contrastive batch size", anchors.nrows(), candidates.nrows()));
        }
        if anchors.ncols() != candidates.ncols() {
            return Err(Error::dims("contrastive batch dims", anchors.ncols(), candidates.ncols()));
        }
        if anchors.nrows() == 0 {
            return Err(Error::InsufficientSamples {
                context: "contrastive batch",
                needed: 1,
                actual: 0,
            });
        }
        Ok(ContrastiveBatch {
            anchors,
            candidates,
            temperature,
        })
    }

    pub fn size(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn dims(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn anchors(&self) -> &Matrix<T> {
        &self.anchors
    }

    pub fn candidates(&self) -> &Matrix<T> {
        &self.candidates
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn anchors_mut(&mut self) -> &mut Matrix<T> {
        &mut self.anchors
    }

    pub fn candidates_mut(&mut self) -> &mut Matrix<T> {
        &mut self.candidates
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.size() {
            return Err(Error::InvalidArgument(format!("index {i} outside batch of {}", self.size())));
        }
        Ok(())
    }

    fn logits(&self, i: usize) -> Vec<T> {
        let x = self.anchors.row(i);
        self.candidates.row_iter().map(|y| dot(x, y) / self.temperature).collect()
    }

    /// Softmax weights `p_ij` over candidates for anchor `i`.
    pub fn softmax_row(&self, i: usize) -> Result<Vec<T>> {
        self.check_index(i)?;
        Ok(softmax(&self.logits(i)))
    }
}

fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `L_i = −log softmax_i(⟨x_i, y_·⟩/τ)`, computed with a max shift.
pub fn infonce_loss<T: Real>(batch: &ContrastiveBatch<T>, i: usize) -> Result<T> {
    batch.check_index(i)?;
    let s = batch.logits(i);
    Ok((log_sum_exp(&s) - s[i]).max(T::zero()))
}

/// `∇_{x_i} L_i = (1/τ)(Σ_j p_ij y_j − y_i)`.
pub fn grad_anchor<T: Real>(batch: &ContrastiveBatch<T>, i: usize) -> Result<Vec<T>> {
    let p = batch.softmax_row(i)?;
    let mut g = vec![T::zero(); batch.dims()];
    for (j, y) in batch.candidates.row_iter().enumerate() {
        let w = if j == i { p[j] - T::one() } else { p[j] };
        for (gk, &yk) in g.iter_mut().zip(y) {
            *gk += w * yk;
        }
    }
    let inv = T::one() / batch.temperature;
    Ok(g.into_iter().map(|v| v * inv).collect())
}

/// `∇_{y_j} L_i = (1/τ)(p_ij − 1{j=i}) x_i`.
pub fn grad_candidate<T: Real>(batch: &ContrastiveBatch<T>, i: usize, j: usize) -> Result<Vec<T>> {
    batch.check_index(j)?;
    let p = batch.softmax_row(i)?;
    let c = (p[j] - if i == j { T::one() } else { T::zero() }) / batch.temperature;
    Ok(batch.anchors.row(i).iter().map(|&x| c * x).collect())
}

/// Similarity head used by the symmetric batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// `s_ij = ⟨x_i, y_j⟩ / τ`.
    Dot,
    /// `s_ij = −‖x_i − y_j‖² / τ`.
    NegSqDist,
}

/// Symmetric (anchor→candidate and candidate→anchor) mean InfoNCE over a
/// batch, with gradients with respect to both embedding matrices.
pub struct SymmetricLoss<T> {
    pub loss: T,
    pub grad_x: Matrix<T>,
    pub grad_y: Matrix<T>,
}

pub fn symmetric_infonce<T: Real>(x: &Matrix<T>, y: &Matrix<T>, tau: T, head: Head) -> Result<SymmetricLoss<T>> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
        return Err(Error::dims("symmetric_infonce", x.nrows(), y.nrows()));
    }
    let b = x.nrows();
    let inv = T::one() / tau;
    let mut s = x.matmul(&y.transpose());
    if head == Head::NegSqDist {
        let nx: Vec<T> = x.row_iter().map(|r| dot(r, r)).collect();
        let ny: Vec<T> = y.row_iter().map(|r| dot(r, r)).collect();
        for i in 0..b {
            for (j, v) in s.row_mut(i).iter_mut().enumerate() {
                *v = T::of(2.0) * *v - nx[i] - ny[j];
            }
        }
    }
    let s = s.scale(inv);
    // G = dL/dS = ((P − I) + (Q − I)) / 2B
    let mut g = Matrix::zeros(b, b);
    let mut loss = T::zero();
    for i in 0..b {
        let row = s.row(i);
        loss += log_sum_exp(row) - row[i];
        let p = softmax(row);
        for (j, pj) in p.into_iter().enumerate() {
            g.as_mut_slice()[i * b + j] += pj;
        }
    }
    for j in 0..b {
        let col = s.column(j);
        loss += log_sum_exp(&col) - col[j];
        let q = softmax(&col);
        for (i, qi) in q.into_iter().enumerate() {
            g.as_mut_slice()[i * b + j] += qi;
        }
    }
    let two_b = T::of_usize(2 * b);
    for i in 0..b {
        g.as_mut_slice()[i * b + i] -= T::of(2.0);
    }
    let g = g.scale(T::one() / two_b);
    let (grad_x, grad_y) = match head {
        Head::Dot => (g.matmul(y).scale(inv), g.t_matmul(x).scale(inv)),
        Head::NegSqDist => {
            // ∂s_ij/∂x_i = −2(x_i − y_j)/τ, ∂s_ij/∂y_j = −2(y_j − x_i)/τ
            let rs: Vec<T> = (0..b).map(|i| g.row(i).iter().copied().sum()).collect();
            let cs: Vec<T> = (0..b).map(|j| (0..b).map(|i| g[(i, j)]).sum()).collect();
            let c = T::of(2.0) * inv;
            let mut gx = g.matmul(y);
            let mut gy = g.t_matmul(x);
            for i in 0..b {
                for (k, v) in gx.row_mut(i).iter_mut().enumerate() {
                    *v = c * (*v - rs[i] * x[(i, k)]);
                }
                for (k, v) in gy.row_mut(i).iter_mut().enumerate() {
                    *v = c * (*v - cs[i] * y[(i, k)]);
                }
            }
            (gx, gy)
        }
    };
    Ok(SymmetricLoss {
        loss: loss / two_b,
        grad_x,
        grad_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, tau: f64) -> ContrastiveBatch<f64> {
        ContrastiveBatch::new(Matrix::from_rows(&x), Matrix::from_rows(&y), tau).unwrap()
    }

    #[test]
    fn single_pair_is_free() {
        let b = batch(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]], 0.1);
        assert_eq!(infonce_loss(&b, 0).unwrap(), 0.0);
        assert_eq!(grad_anchor(&b, 0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn indistinguishable_candidates() {
        let b = batch(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.6, 0.8], vec![0.6, 0.8]], 0.5);
        assert!((infonce_loss(&b, 0).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_candidate_softmax() {
        let b = batch(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
        let e = 1f64.exp();
        let oracle = -(e / (e + 1.0)).ln();
        assert!((infonce_loss(&b, 0).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn saturated_candidate_gradient_vanishes() {
        let b = batch(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1e-3);
        let g = grad_candidate(&b, 0, 0).unwrap();
        assert!(norm(&g) < 1e-300);
    }

    #[test]
    fn rejects_bad_temperature() {
        let m = Matrix::from_rows(&[vec![1.0]]);
        assert!(ContrastiveBatch::new(m.clone(), m.clone(), 0.0).is_err());
        assert!(symmetric_infonce(&m, &m, -1.0, Head::Dot).is_err());
    }
}
