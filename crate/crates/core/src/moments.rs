//! Streaming first/second moment estimation.
//!
//! Accumulators keep raw moments (`Σe`, `Σ‖e‖²`, optionally `Σeeᵀ`) so that
//! shard-local accumulators merge by addition. The accumulator scalar `A`
//! is independent of the input element type; use `f64` unless the point is
//! to measure what a narrower accumulator loses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Default shrinkage intensity exposed by the CLI.
pub const DEFAULT_SHRINK: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator<A = f64> {
    n: u64,
    dims: usize,
    sum: Vec<A>,
    sumsq_norm: A,
    /// Upper triangle of `Σ eeᵀ`, stored as a full row-major `dims × dims`
    /// buffer; the lower triangle is filled on finalize.
    scatter: Option<Vec<A>>,
}

impl<A: Real> MomentAccumulator<A> {
    pub fn new(dims: usize, track_cov: bool) -> Self {
        MomentAccumulator {
            n: 0,
            dims,
            sum: vec![A::zero(); dims],
            sumsq_norm: A::zero(),
            scatter: track_cov.then(|| vec![A::zero(); dims * dims]),
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn tracks_covariance(&self) -> bool {
        self.scatter.is_some()
    }

    pub fn sum(&self) -> &[A] {
        &self.sum
    }

    pub fn sumsq_norm(&self) -> A {
        self.sumsq_norm
    }

    /// Bytes owned by the accumulator, heap included. Depends on `dims`
    /// and the covariance flag only.
    pub fn state_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.sum.capacity() * std::mem::size_of::<A>()
            + self.scatter.as_ref().map_or(0, |s| s.capacity() * std::mem::size_of::<A>())
    }

    /// Adds one row. The row is converted to the accumulator type first.
    pub fn push<T: Real>(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.dims {
            return Err(Error::dims("accumulate", self.dims, row.len()));
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: self.n as usize,
                col,
            });
        }
        self.push_unchecked(row);
        Ok(())
    }

    fn push_unchecked<T: Real>(&mut self, row: &[T]) {
        let d = self.dims;
        let mut sq = A::zero();
        // Converting once per row keeps the inner loops in `A`.
        let x: Vec<A> = row.iter().map(|&v| cast::<T, A>(v)).collect();
        for (s, &xi) in self.sum.iter_mut().zip(&x) {
            *s += xi;
            sq += xi * xi;
        }
        self.sumsq_norm += sq;
        if let Some(scatter) = self.scatter.as_mut() {
            for i in 0..d {
                let xi = x[i];
                let upper = &mut scatter[i * d + i..(i + 1) * d];
                for (s, &xj) in upper.iter_mut().zip(&x[i..]) {
                    *s += xi * xj;
                }
            }
        }
        self.n += 1;
    }

    /// Accumulates every row of `batch`. On error the accumulator is
    /// unchanged.
    pub fn accumulate<T: Real>(&mut self, batch: &EmbeddingSet<T>) -> Result<()> {
        if batch.dims() != self.dims {
            return Err(Error::dims("accumulate", self.dims, batch.dims()));
        }
        if let Some(pos) = batch.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / self.dims,
                col: pos % self.dims,
            });
        }
        for row in batch.row_iter() {
            self.push_unchecked(row);
        }
        Ok(())
    }

    /// Combines two shard accumulators.
    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::dims("merge", self.dims, other.dims));
        }
        if self.tracks_covariance() != other.tracks_covariance() {
            return Err(Error::InvalidArgument(
                "cannot merge accumulators with different covariance tracking".into(),
            ));
        }
        self.n += other.n;
        for (a, &b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        self.sumsq_norm += other.sumsq_norm;
        if let (Some(a), Some(b)) = (self.scatter.as_mut(), other.scatter.as_ref()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(self)
    }

    pub fn finalize(&self) -> Result<ModalityStats<A>> {
        if self.n == 0 {
            return Err(Error::InsufficientSamples {
                context: "finalize mean/trace",
                needed: 1,
                actual: 0,
            });
        }
        let n = A::from_u64(self.n).expect("count fits the accumulator type");
        let mean: Vec<A> = self.sum.iter().map(|&s| s / n).collect();
        let mean_sq: A = mean.iter().map(|&m| m * m).sum();
        let mut trace = self.sumsq_norm / n - mean_sq;
        if trace < A::zero() {
            log::warn!("trace estimate {trace} is negative from round-off; clamped to 0");
            trace = A::zero();
        }
        let covariance = match &self.scatter {
            None => None,
            Some(scatter) => {
                if self.n < 2 {
                    return Err(Error::InsufficientSamples {
                        context: "finalize covariance",
                        needed: 2,
                        actual: self.n as usize,
                    });
                }
                let d = self.dims;
                let mut cov = Matrix::zeros(d, d);
                for i in 0..d {
                    for j in i..d {
                        let v = scatter[i * d + j] / n - mean[i] * mean[j];
                        cov[(i, j)] = v;
                        cov[(j, i)] = v;
                    }
                }
                Some(cov)
            }
        };
        Ok(ModalityStats {
            mean,
            trace,
            covariance,
            n: self.n,
        })
    }
}

#[inline]
fn cast<T: Real, A: Real>(v: T) -> A {
    A::of(v.to_f64_lossless())
}

/// Accumulates a whole set in one pass.
pub fn stats_of<T: Real>(set: &EmbeddingSet<T>, track_cov: bool) -> Result<ModalityStats<f64>> {
    let mut acc = MomentAccumulator::<f64>::new(set.dims(), track_cov);
    acc.accumulate(set)?;
    acc.finalize()
}

/// Summary statistics for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ModalityStats<T> {
    pub mean: Vec<T>,
    /// E‖e − μ‖².
    pub trace: T,
    pub covariance: Option<Matrix<T>>,
    pub n: u64,
}

impl<T: Real> ModalityStats<T> {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// Returns a copy with the covariance replaced by its shrunk version.
    pub fn with_shrinkage(mut self, lambda: T) -> Result<Self> {
        if let Some(cov) = self.covariance.take() {
            self.covariance = Some(shrink(&cov, lambda)?);
        }
        Ok(self)
    }
}

/// Linear shrinkage toward the scaled identity: `(1−λ)Σ + λ(trΣ/d)I`.
pub fn shrink<T: Real>(sigma: &Matrix<T>, lambda: T) -> Result<Matrix<T>> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage intensity must lie in [0, 1], got {lambda}"
        )));
    }
    if !sigma.is_square() {
        return Err(Error::dims("shrink", sigma.nrows(), sigma.ncols()));
    }
    let d = sigma.nrows();
    let target = sigma.trace() / T::of_usize(d);
    let mut out = sigma.scale(T::one() - lambda);
    out.add_diag(lambda * target);
    Ok(out)
}
