//! Forward and inverse multi-stage transforms.
//!
//! One stage cuts its input into `s × s` cuboids of length `d = s²·K_in`
//! and emits, per cuboid, a DC coefficient `Σc/√d` followed by the `d`
//! projections of the mean-removed residual onto the stage's AC kernels.
//! Because the residual is orthogonal to the all-ones direction and the AC
//! kernels form an orthonormal basis, every stage preserves squared norm and
//! is exactly invertible.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Result, SaakError};
use crate::kernels::StageKernels;
use crate::model::SaakModel;
use crate::tensor::{check_divisible, partition_into_cuboids, CoefficientTensor, CuboidBatch, ImageTensor, Tensor3};

/// Transform geometry, written `(s-T)`, e.g. `(2-5)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SaakConfig {
    pub spatial: usize,
    pub stages: usize,
    pub in_channels: usize,
}

impl SaakConfig {
    pub fn new(spatial: usize, stages: usize, in_channels: usize) -> Result<Self> {
        let c = Self {
            spatial,
            stages,
            in_channels,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial < 2 || self.stages == 0 || self.in_channels == 0 {
            return Err(SaakError::InvalidArgument(format!(
                "invalid transform setting {self} with {} input channels (need s >= 2, T >= 1, C >= 1)",
                self.in_channels
            )));
        }
        if self.spatial.checked_pow(self.stages as u32).is_none() {
            return Err(SaakError::InvalidArgument(format!("setting {self} overflows")));
        }
        Ok(())
    }

    /// Side length that images must be divisible by: `s^T`.
    pub fn footprint(&self) -> usize {
        self.spatial.pow(self.stages as u32)
    }

    pub fn spectral_dim(&self) -> usize {
        spectral_dim(self.spatial, self.stages, self.in_channels)
    }

    /// Input channel count of stage `stage` (1-based).
    pub fn stage_in_channels(&self, stage: usize) -> usize {
        spectral_dim(self.spatial, stage - 1, self.in_channels)
    }

    /// Checks that an image of this shape can be transformed.
    pub fn check_image(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        if channels != self.in_channels {
            return Err(SaakError::Incompatible {
                stage: 1,
                reason: format!("image has {channels} channels, model expects {}", self.in_channels),
            });
        }
        let mut h = height;
        let mut w = width;
        for stage in 1..=self.stages {
            check_divisible(h, w, self.spatial).map_err(|e| SaakError::Incompatible {
                stage,
                reason: e.to_string(),
            })?;
            h /= self.spatial;
            w /= self.spatial;
        }
        Ok(())
    }
}

impl fmt::Display for SaakConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}-{})", self.spatial, self.stages)
    }
}

/// Channel count after `stages` stages: `K_0 = C`, `K_i = s²·K_{i−1} + 1`.
///
/// Saturates at `usize::MAX` instead of overflowing.
pub fn spectral_dim(spatial: usize, stages: usize, in_channels: usize) -> usize {
    let block = spatial.saturating_mul(spatial);
    (0..stages).fold(in_channels, |k, _| block.saturating_mul(k).saturating_add(1))
}

/// Transforms one cuboid into `[DC, AC_1 … AC_d]`, writing into `out`.
fn forward_cuboid(cuboid: &[f64], k: &StageKernels, residual: &mut [f64], out: &mut [f64]) {
    let d = cuboid.len();
    let sum: f64 = cuboid.iter().sum();
    let mean = sum / d as f64;
    for (r, c) in residual.iter_mut().zip(cuboid) {
        *r = c - mean;
    }
    out[0] = sum / (d as f64).sqrt();
    for (i, o) in out[1..].iter_mut().enumerate() {
        *o = eigen::dot(k.kernel(i), residual);
    }
}

/// Inverts one `[DC, AC…]` vector back into a cuboid, writing into `out`.
fn inverse_cuboid(coeffs: &[f64], k: &StageKernels, out: &mut [f64]) {
    let d = out.len();
    let dc_share = coeffs[0] / (d as f64).sqrt();
    out.iter_mut().for_each(|v| *v = dc_share);
    for (i, &a) in coeffs[1..].iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, kv) in out.iter_mut().zip(k.kernel(i)) {
            *o += a * kv;
        }
    }
}

/// One forward stage: `h × w × K_in` → `(h/s) × (w/s) × (s²·K_in + 1)`.
pub fn forward_stage(t: &Tensor3, k: &StageKernels) -> Result<CoefficientTensor> {
    if t.channels() != k.in_channels() {
        return Err(SaakError::Incompatible {
            stage: k.stage_index(),
            reason: format!("input has {} channels, kernels expect {}", t.channels(), k.in_channels()),
        });
    }
    let s = k.spatial();
    let cuboids = partition_into_cuboids(t, s).map_err(|e| SaakError::Incompatible {
        stage: k.stage_index(),
        reason: e.to_string(),
    })?;
    let d = k.dim();
    let out_c = k.out_channels();
    let mut out = vec![0.0; cuboids.count() * out_c];
    let mut residual = vec![0.0; d];
    for (cuboid, dst) in cuboids.rows().zip(out.chunks_exact_mut(out_c)) {
        forward_cuboid(cuboid, k, &mut residual, dst);
    }
    let tensor = Tensor3::new(t.height() / s, t.width() / s, out_c, out)?;
    Ok(CoefficientTensor::from_parts(k.stage_index(), tensor))
}

/// One inverse stage: exact inverse of [`forward_stage`] on unmodified
/// coefficients.
pub fn inverse_stage(c: &CoefficientTensor, k: &StageKernels) -> Result<Tensor3> {
    if c.channels() != k.out_channels() {
        return Err(SaakError::Incompatible {
            stage: k.stage_index(),
            reason: format!(
                "coefficients have {} channels, kernels produce {}",
                c.channels(),
                k.out_channels()
            ),
        });
    }
    let s = k.spatial();
    let d = k.dim();
    let locations = c.height() * c.width();
    let mut cuboids = vec![0.0; locations * d];
    for (coeffs, dst) in c.data().chunks_exact(k.out_channels()).zip(cuboids.chunks_exact_mut(d)) {
        inverse_cuboid(coeffs, k, dst);
    }
    let batch = CuboidBatch::new(d, cuboids)?;
    batch.assemble(c.height() * s, c.width() * s, k.in_channels(), s)
}

/// Runs stages `1..=upto` and returns the stage-`upto` coefficients.
pub fn forward_to_stage(img: &ImageTensor, m: &SaakModel, upto: usize) -> Result<CoefficientTensor> {
    let cfg = m.config();
    if upto == 0 || upto > cfg.stages {
        return Err(SaakError::InvalidArgument(format!(
            "stage {upto} outside 1..={}",
            cfg.stages
        )));
    }
    cfg.check_image(img.height(), img.width(), img.channels())?;
    let mut current = forward_stage(img.as_tensor(), &m.stages()[0])?;
    for k in &m.stages()[1..upto] {
        current = forward_stage(current.as_tensor(), k)?;
    }
    Ok(current)
}

/// Full forward transform to the final-stage coefficients.
pub fn forward(img: &ImageTensor, m: &SaakModel) -> Result<CoefficientTensor> {
    forward_to_stage(img, m, m.config().stages)
}

/// Full inverse transform. With `clamp`, the reconstruction is clipped to
/// `[0, 1]` after the last stage only.
pub fn inverse(c: &CoefficientTensor, m: &SaakModel, clamp: bool) -> Result<ImageTensor> {
    let cfg = m.config();
    if c.stage() != cfg.stages {
        return Err(SaakError::Incompatible {
            stage: c.stage(),
            reason: format!("coefficients are from stage {}, model has {} stages", c.stage(), cfg.stages),
        });
    }
    let mut stages = m.stages().iter().rev();
    let last = stages.next().expect("model has at least one stage");
    let mut current = inverse_stage(c, last)?;
    for k in stages {
        let coeffs = CoefficientTensor::from_parts(k.stage_index(), current);
        current = inverse_stage(&coeffs, k)?;
    }
    let img = ImageTensor::from_tensor(current);
    Ok(if clamp { img.clamped() } else { img })
}

/// [`forward`] over a batch, parallel over images.
pub fn forward_batch(images: &[ImageTensor], m: &SaakModel) -> Result<Vec<CoefficientTensor>> {
    images.par_iter().map(|img| forward(img, m)).collect()
}
