//! Per-stage KLT kernels learned from clean cuboids.

use rayon::prelude::*;

use crate::covariance::CovarianceAccumulator;
use crate::eigen::{self, symmetric_eigendecomposition};
use crate::error::{Result, SaakError};
use crate::tensor::CuboidBatch;

/// Maximum `|K Kᵀ − I|` accepted for a kernel matrix.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-8;
/// Eigenvalues below `-NEGATIVE_EIGENVALUE_TOLERANCE` are a numerical failure.
pub const NEGATIVE_EIGENVALUE_TOLERANCE: f64 = 1e-10;
/// The smallest eigenvalue must be at most this fraction of the largest.
pub const NULL_DIRECTION_RATIO: f64 = 1e-8;

/// Which stage a batch of cuboids belongs to and how it was cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageGeometry {
    pub stage_index: usize,
    pub spatial: usize,
    pub in_channels: usize,
}

impl StageGeometry {
    pub fn dim(&self) -> usize {
        self.spatial * self.spatial * self.in_channels
    }
}

/// One stage of a trained transform.
///
/// The DC kernel is the fixed vector `(1/√d)·𝟙`; `ac_kernels` rows are the
/// eigenvectors of the residual covariance, strongest first. A stage maps a
/// `d`-long cuboid to `d + 1` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StageKernels {
    geometry: StageGeometry,
    ac_kernels: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl StageKernels {
    /// Builds a stage from raw parts and checks every invariant.
    pub fn from_parts(geometry: StageGeometry, eigenvalues: Vec<f64>, ac_kernels: Vec<f64>) -> Result<Self> {
        let k = Self {
            geometry,
            ac_kernels,
            eigenvalues,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn geometry(&self) -> StageGeometry {
        self.geometry
    }

    pub fn stage_index(&self) -> usize {
        self.geometry.stage_index
    }

    pub fn spatial(&self) -> usize {
        self.geometry.spatial
    }

    pub fn in_channels(&self) -> usize {
        self.geometry.in_channels
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn out_channels(&self) -> usize {
        self.dim() + 1
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row-major `d × d`; row `i` is the `i`-th AC kernel.
    pub fn ac_kernels(&self) -> &[f64] {
        &self.ac_kernels
    }

    pub fn kernel(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.ac_kernels[i * d..(i + 1) * d]
    }

    /// `max |K Kᵀ − I|` over all entries.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.dim();
        (0..d)
            .into_par_iter()
            .map(|i| {
                let ki = self.kernel(i);
                (i..d)
                    .map(|j| {
                        let target = if i == j { 1.0 } else { 0.0 };
                        (eigen::dot(ki, self.kernel(j)) - target).abs()
                    })
                    .fold(0.0f64, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.geometry;
        let fail = |reason: String| Err(SaakError::InvalidModel(format!("stage {}: {reason}", g.stage_index)));
        if g.stage_index == 0 || g.spatial == 0 || g.in_channels == 0 {
            return fail("stage index, block side and input channels must be positive".into());
        }
        let d = g.dim();
        if self.eigenvalues.len() != d {
            return fail(format!("{} eigenvalues for dimension {d}", self.eigenvalues.len()));
        }
        if self.ac_kernels.len() != d * d {
            return fail(format!("{} kernel entries for dimension {d}", self.ac_kernels.len()));
        }
        if self.eigenvalues.iter().chain(&self.ac_kernels).any(|v| !v.is_finite()) {
            return fail("non-finite parameters".into());
        }
        if let Some(w) = self.eigenvalues.windows(2).find(|w| w[0] < w[1]) {
            return fail(format!("eigenvalues not non-increasing ({} < {})", w[0], w[1]));
        }
        let (largest, smallest) = (self.eigenvalues[0], self.eigenvalues[d - 1]);
        if smallest < -NEGATIVE_EIGENVALUE_TOLERANCE {
            return fail(format!("negative eigenvalue {smallest:e}"));
        }
        if smallest > NULL_DIRECTION_RATIO * largest {
            return fail(format!(
                "smallest eigenvalue {smallest:e} is not negligible next to {largest:e}"
            ));
        }
        let ortho = self.orthonormality_error();
        if ortho > ORTHONORMALITY_TOLERANCE {
            return fail(format!("kernels deviate from orthonormal by {ortho:e}"));
        }
        Ok(())
    }
}

/// Subtracts each row's own mean in place.
pub fn remove_cuboid_means(batch: &CuboidBatch) -> CuboidBatch {
    let d = batch.dim();
    let mut data = batch.data().to_vec();
    data.par_chunks_mut(d).for_each(|row| {
        let mean = row.iter().sum::<f64>() / d as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    });
    CuboidBatch::new(d, data).expect("same shape as input batch")
}

/// Learns the AC kernels of one stage from its input cuboids.
///
/// Each cuboid's own mean is removed first, so the residual covariance always
/// has the all-ones direction in its null space.
pub fn train_stage(cuboids: &CuboidBatch, geometry: StageGeometry) -> Result<StageKernels> {
    let d = geometry.dim();
    if cuboids.dim() != d {
        return Err(SaakError::ShapeMismatch(format!(
            "stage {}: cuboid dim {} does not match {}x{}x{}",
            geometry.stage_index,
            cuboids.dim(),
            geometry.spatial,
            geometry.spatial,
            geometry.in_channels
        )));
    }
    if cuboids.count() == 0 {
        return Err(SaakError::Empty("no cuboids to train a stage on"));
    }
    if cuboids.count() < d {
        log::warn!(
            "stage {}: {} cuboids for dimension {d}; residual covariance is rank-deficient",
            geometry.stage_index,
            cuboids.count()
        );
    }
    let residuals = remove_cuboid_means(cuboids);
    let mut acc = CovarianceAccumulator::new(d);
    acc.accumulate_parallel(&residuals)?;
    let cov = acc.covariance()?;
    let eig = symmetric_eigendecomposition(&cov, d, eigen::DEFAULT_TOLERANCE)?;
    let (mut eigenvalues, ac_kernels) = eig.into_parts();
    for v in eigenvalues.iter_mut() {
        if *v < -NEGATIVE_EIGENVALUE_TOLERANCE {
            return Err(SaakError::NegativeEigenvalue {
                stage: geometry.stage_index,
                value: *v,
            });
        }
        // round-off around the null space
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    StageKernels::from_parts(geometry, eigenvalues, ac_kernels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry(d_channels: usize) -> StageGeometry {
        StageGeometry {
            stage_index: 1,
            spatial: 1,
            in_channels: d_channels,
        }
    }

    #[test]
    fn constant_rows_have_zero_spectrum() {
        let rows: Vec<f64> = (0..40).flat_map(|i| vec![i as f64 * 0.1; 4]).collect();
        let k = train_stage(&CuboidBatch::new(4, rows).unwrap(), geometry(4)).unwrap();
        assert!(k.eigenvalues().iter().all(|v| v.abs() <= 1e-12));
        assert!(k.orthonormality_error() <= 1e-12);
    }

    #[test]
    fn single_residual_axis_gives_rank_one() {
        // residual direction (1, -1, 0, 0): mean-free already
        let rows: Vec<f64> = (0..30)
            .flat_map(|i| {
                let a = (i as f64 - 14.5) / 7.0;
                vec![2.0 + a, 2.0 - a, 2.0, 2.0]
            })
            .collect();
        let k = train_stage(&CuboidBatch::new(4, rows).unwrap(), geometry(4)).unwrap();
        let above: Vec<_> = k.eigenvalues().iter().filter(|v| **v > 1e-12).collect();
        assert_eq!(above.len(), 1);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((k.kernel(0)[0] - r).abs() < 1e-12 && (k.kernel(0)[1] + r).abs() < 1e-12);
    }

    #[test]
    fn kernels_diagonalize_residual_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<f64> = (0..500 * 4)
            .map(|i| rng.gen_range(-1.0..1.0) * (1.0 + (i % 4) as f64))
            .collect();
        let batch = CuboidBatch::new(4, rows).unwrap();
        let k = train_stage(&batch, geometry(4)).unwrap();

        // independent covariance of the mean-removed rows, two-pass
        let n = batch.count() as f64;
        let res: Vec<Vec<f64>> = batch
            .rows()
            .map(|r| {
                let m = r.iter().sum::<f64>() / 4.0;
                r.iter().map(|v| v - m).collect()
            })
            .collect();
        let mu: Vec<f64> = (0..4).map(|j| res.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut cov = [[0.0; 4]; 4];
        for r in &res {
            for i in 0..4 {
                for j in 0..4 {
                    cov[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]) / n;
                }
            }
        }
        // Kᵀ Λ K reconstructs the covariance
        for (i, row) in cov.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                let rec: f64 = (0..4).map(|m| k.kernel(m)[i] * k.eigenvalues()[m] * k.kernel(m)[j]).sum();
                assert!((rec - want).abs() <= 1e-8, "({i},{j}) {rec} vs {want}");
            }
        }
        assert!(k.orthonormality_error() <= 1e-8);
        assert!(k.eigenvalues()[3] <= NULL_DIRECTION_RATIO * k.eigenvalues()[0]);
        // the null direction is the normalized all-ones vector
        assert!(k.kernel(3).iter().all(|v| (v - 0.5).abs() < 1e-8));
    }

    #[test]
    fn empty_and_mismatched_batches() {
        assert!(matches!(
            train_stage(&CuboidBatch::empty(4), geometry(4)),
            Err(SaakError::Empty(_))
        ));
        assert!(matches!(
            train_stage(&CuboidBatch::new(3, vec![0.0; 3]).unwrap(), geometry(4)),
            Err(SaakError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn validate_rejects_broken_kernels() {
        let g = geometry(2);
        let ok = StageKernels::from_parts(g, vec![1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(ok.is_ok());
        // not orthonormal
        assert!(StageKernels::from_parts(g, vec![1.0, 0.0], vec![1.0, 0.1, 0.0, 1.0]).is_err());
        // increasing eigenvalues
        assert!(StageKernels::from_parts(g, vec![0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0]).is_err());
        // no null direction
        assert!(StageKernels::from_parts(g, vec![1.0, 0.5], vec![1.0, 0.0, 0.0, 1.0]).is_err());
        // wrong length
        assert!(StageKernels::from_parts(g, vec![1.0], vec![1.0, 0.0, 0.0, 1.0]).is_err());
    }
}
