//! Streaming first/second moment accumulation for stage training.

use rayon::prelude::*;

use crate::error::{Result, SaakError};
use crate::tensor::CuboidBatch;

/// Rows per partial accumulator when accumulating in parallel. Fixed so the
/// summation order, and therefore the result, does not depend on the number
/// of worker threads.
const PARALLEL_CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    dim: usize,
    count: u64,
    sum: Vec<f64>,
    // Only the lower triangle is updated while accumulating; `mirror` fills
    // the upper half before the matrix is exposed.
    outer_sum: Vec<f64>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            sum: vec![0.0; dim],
            outer_sum: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// Full symmetric `Σ r rᵀ`.
    pub fn outer_sum(&self) -> Vec<f64> {
        let mut m = self.outer_sum.clone();
        mirror(&mut m, self.dim);
        m
    }

    pub fn accumulate(&mut self, batch: &CuboidBatch) -> Result<()> {
        self.check_dim(batch.dim())?;
        self.accumulate_rows(batch.data());
        Ok(())
    }

    /// Accumulates `batch` through fixed-size partial accumulators merged in
    /// row order. Bit-identical to itself for any thread count.
    pub fn accumulate_parallel(&mut self, batch: &CuboidBatch) -> Result<()> {
        self.check_dim(batch.dim())?;
        let dim = self.dim;
        let partials: Vec<CovarianceAccumulator> = batch
            .data()
            .par_chunks(PARALLEL_CHUNK_ROWS * dim)
            .map(|rows| {
                let mut acc = CovarianceAccumulator::new(dim);
                acc.accumulate_rows(rows);
                acc
            })
            .collect();
        for p in &partials {
            self.merge(p)?;
        }
        Ok(())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(SaakError::ShapeMismatch(format!(
                "batch dim {dim} does not match accumulator dim {}",
                self.dim
            )));
        }
        Ok(())
    }

    fn accumulate_rows(&mut self, rows: &[f64]) {
        let d = self.dim;
        for row in rows.chunks_exact(d) {
            for (s, v) in self.sum.iter_mut().zip(row) {
                *s += v;
            }
            for i in 0..d {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                let dst = &mut self.outer_sum[i * d..i * d + i + 1];
                for (o, rj) in dst.iter_mut().zip(&row[..=i]) {
                    *o += ri * rj;
                }
            }
            self.count += 1;
        }
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) -> Result<()> {
        self.check_dim(other.dim)?;
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.outer_sum.iter_mut().zip(&other.outer_sum) {
            *a += b;
        }
        Ok(())
    }

    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(SaakError::Empty("covariance of zero samples"));
        }
        let n = self.count as f64;
        Ok(self.sum.iter().map(|s| s / n).collect())
    }

    /// Population covariance `outer_sum / n − μ μᵀ`, symmetric by construction.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        let mean = self.mean()?;
        let n = self.count as f64;
        let d = self.dim;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                cov[i * d + j] = self.outer_sum[i * d + j] / n - mean[i] * mean[j];
            }
        }
        mirror(&mut cov, d);
        Ok(cov)
    }
}

fn mirror(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            m[j * d + i] = m[i * d + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_batch_is_noop() {
        let mut acc = CovarianceAccumulator::new(3);
        acc.accumulate(&CuboidBatch::new(3, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let before = acc.clone();
        acc.accumulate(&CuboidBatch::empty(3)).unwrap();
        assert_eq!(acc, before);
    }

    #[test]
    fn hand_computed_covariance() {
        let mut acc = CovarianceAccumulator::new(2);
        acc.accumulate(&CuboidBatch::new(2, vec![1.0, 0.0, -1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(acc.count(), 2);
        assert_eq!(acc.covariance().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut acc = CovarianceAccumulator::new(2);
        assert!(acc.accumulate(&CuboidBatch::new(3, vec![0.0; 3]).unwrap()).is_err());
        assert!(acc.merge(&CovarianceAccumulator::new(4)).is_err());
    }

    #[test]
    fn empty_covariance_is_error() {
        assert!(CovarianceAccumulator::new(2).covariance().is_err());
    }

    #[test]
    fn outer_sum_is_symmetric() {
        let mut acc = CovarianceAccumulator::new(3);
        acc.accumulate(&CuboidBatch::new(3, vec![1.0, -2.0, 0.5, 3.0, 1.0, -1.0]).unwrap())
            .unwrap();
        let m = acc.outer_sum();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i * 3 + j], m[j * 3 + i]);
            }
        }
    }

    #[test]
    fn parallel_matches_sequential_bitwise_for_small_batches() {
        let data: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64) / 17.0 - 2.0).collect();
        let batch = CuboidBatch::new(5, data).unwrap();
        let mut a = CovarianceAccumulator::new(5);
        a.accumulate(&batch).unwrap();
        let mut b = CovarianceAccumulator::new(5);
        b.accumulate_parallel(&batch).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn split_and_merge_matches_single_pass(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..60),
            split in 0usize..60,
        ) {
            let split = split.min(rows.len());
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let mut whole = CovarianceAccumulator::new(4);
            whole.accumulate(&CuboidBatch::new(4, flat.clone()).unwrap()).unwrap();

            let mut left = CovarianceAccumulator::new(4);
            left.accumulate(&CuboidBatch::new(4, flat[..split * 4].to_vec()).unwrap()).unwrap();
            let mut right = CovarianceAccumulator::new(4);
            right.accumulate(&CuboidBatch::new(4, flat[split * 4..].to_vec()).unwrap()).unwrap();
            left.merge(&right).unwrap();

            prop_assert_eq!(left.count(), whole.count());
            let a = whole.covariance().unwrap();
            let b = left.covariance().unwrap();
            let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }
}
