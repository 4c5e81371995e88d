//! Streaming throughput, memory and precision measurements for the moment
//! accumulators.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::moments::MomentAccumulator;

/// Rows in the synthetic block that is replayed to reach each size.
const BLOCK_ROWS: usize = 8192;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: u64,
    pub dims: usize,
    pub seconds: f64,
    pub ns_per_row: f64,
    pub state_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThroughputReport {
    pub rows: Vec<BenchRow>,
    /// Largest relative deviation of ns/row from the mean over sizes.
    pub max_rate_deviation: f64,
    pub state_bytes_constant: bool,
}

/// Unit-norm rows with a common offset, so that sums grow with `n` the way
/// real embedding sums do.
fn unit_rows(n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * dims);
    let mut row = vec![0.0f64; dims];
    for _ in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            let g: f64 = StandardNormal.sample(rng);
            *v = g + if j == 0 { 3.0 } else { 0.0 };
        }
        let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(row.iter().map(|v| (v / nr) as f32));
    }
    out
}

/// Accumulates `n` rows per size (covariance tracked) and times only the
/// accumulation.
pub fn streaming_throughput(sizes: &[u64], dims: usize, seed: u64) -> Result<ThroughputReport> {
    if dims == 0 || sizes.is_empty() {
        return Err(Error::InvalidArgument("bench needs dims >= 1 and at least one size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = EmbeddingSet::new(BLOCK_ROWS, dims, unit_rows(BLOCK_ROWS, dims, &mut rng), "bench")?;
    let run = |n: u64| -> Result<(f64, usize)> {
        let mut acc = MomentAccumulator::<f64>::new(dims, true);
        let start = Instant::now();
        let mut left = n as usize;
        while left > 0 {
            let take = left.min(BLOCK_ROWS);
            if take == BLOCK_ROWS {
                acc.accumulate(&block)?;
            } else {
                acc.accumulate(&block.slice_rows(0, take))?;
            }
            left -= take;
        }
        let secs = start.elapsed().as_secs_f64();
        std::hint::black_box(acc.sum());
        Ok((secs, acc.state_bytes()))
    };
    // warm caches and the allocator before timing
    run(sizes[0].min(BLOCK_ROWS as u64 * 4))?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let (seconds, state_bytes) = run(n)?;
        rows.push(BenchRow {
            n,
            dims,
            seconds,
            ns_per_row: seconds * 1e9 / n.max(1) as f64,
            state_bytes,
        });
    }
    let mean_rate = rows.iter().map(|r| r.ns_per_row).sum::<f64>() / rows.len() as f64;
    let max_rate_deviation = rows.iter().map(|r| (r.ns_per_row / mean_rate - 1.0).abs()).fold(0.0, f64::max);
    let state_bytes_constant = rows.windows(2).all(|w| w[0].state_bytes == w[1].state_bytes);
    Ok(ThroughputReport {
        rows,
        max_rate_deviation,
        state_bytes_constant,
    })
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecisionReport {
    pub n: u64,
    pub dims: usize,
    /// `‖μ̂ − μ_oracle‖∞` with an f64 accumulator.
    pub f64_error: f64,
    /// Same, with an f32 accumulator replaying the identical rows.
    pub f32_error: f64,
    pub ratio: f64,
}

/// Replays the same f32 rows through f64 and f32 accumulators and compares
/// both means against a compensated-summation oracle.
pub fn precision_replay(n: u64, dims: usize, seed: u64) -> Result<PrecisionReport> {
    if n == 0 || dims == 0 {
        return Err(Error::InvalidArgument("precision replay needs n, dims >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc64 = MomentAccumulator::<f64>::new(dims, false);
    let mut acc32 = MomentAccumulator::<f32>::new(dims, false);
    let mut oracle = vec![CompensatedSum::default(); dims];
    let mut left = n as usize;
    while left > 0 {
        let take = left.min(BLOCK_ROWS);
        let data = unit_rows(take, dims, &mut rng);
        for row in data.chunks_exact(dims) {
            acc64.push(row)?;
            acc32.push(row)?;
            for (o, &v) in oracle.iter_mut().zip(row) {
                o.add(v as f64);
            }
        }
        left -= take;
    }
    let mean64 = acc64.finalize()?.mean;
    let mean32 = acc32.finalize()?.mean;
    let nf = n as f64;
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    for j in 0..dims {
        let truth = oracle[j].value() / nf;
        e64 = e64.max((mean64[j] - truth).abs());
        e32 = e32.max((mean32[j] as f64 - truth).abs());
    }
    Ok(PrecisionReport {
        n,
        dims,
        f64_error: e64,
        f32_error: e32,
        // an exact f64 result would make the ratio infinite; floor at one ulp of the mean
        ratio: e32 / e64.max(f64::EPSILON * 1e-3),
    })
}
