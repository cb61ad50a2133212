//! Multi-stage model: training and the `SAAK` binary file format.
//!
//! File layout, all integers and reals little-endian:
//!
//! ```text
//! "SAAK"                      4 bytes
//! version                     u32 (= 1)
//! spatial, stages, channels   3 × u32
//! per stage:
//!   stage_index, in_channels, dim   3 × u32
//!   eigenvalues                     dim × f64
//!   ac_kernels (row-major)          dim × dim × f64
//! sample_count                u64
//! content digest              32 bytes (SHA-256)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Result, SaakError};
use crate::io::{open_file, read_exact_array, write_atomic};
use crate::kernels::{train_stage, StageGeometry, StageKernels};
use crate::tensor::{partition_into_cuboids, CuboidBatch, ImageTensor, Tensor3};
use crate::transform::{forward_stage, SaakConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"SAAK";
pub const MODEL_VERSION: u32 = 1;

/// Default cap on cuboids used to train one stage.
pub const DEFAULT_SAMPLE_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    /// Number of training images.
    pub sample_count: u64,
    /// SHA-256 over the setting, sample cap, seed and training pixels.
    pub digest: [u8; 32],
}

impl TrainingMeta {
    pub fn digest_hex(&self) -> String {
        self.digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaakModel {
    config: SaakConfig,
    stages: Vec<StageKernels>,
    meta: TrainingMeta,
}

impl SaakModel {
    pub fn new(config: SaakConfig, stages: Vec<StageKernels>, meta: TrainingMeta) -> Result<Self> {
        let m = Self { config, stages, meta };
        m.validate()?;
        Ok(m)
    }

    pub fn config(&self) -> SaakConfig {
        self.config
    }

    pub fn stages(&self) -> &[StageKernels] {
        &self.stages
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn spectral_dim(&self) -> usize {
        self.stages.last().map_or(self.config.in_channels, StageKernels::out_channels)
    }

    /// Checks channel chaining and every per-stage invariant.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.stages.len() != self.config.stages {
            return Err(SaakError::InvalidModel(format!(
                "{} stages stored for setting {}",
                self.stages.len(),
                self.config
            )));
        }
        let mut expected_in = self.config.in_channels;
        for (i, k) in self.stages.iter().enumerate() {
            if k.stage_index() != i + 1 {
                return Err(SaakError::InvalidModel(format!(
                    "stage at position {} has index {}",
                    i + 1,
                    k.stage_index()
                )));
            }
            if k.spatial() != self.config.spatial {
                return Err(SaakError::InvalidModel(format!(
                    "stage {} block side {} differs from setting {}",
                    i + 1,
                    k.spatial(),
                    self.config
                )));
            }
            if k.in_channels() != expected_in {
                return Err(SaakError::InvalidModel(format!(
                    "stage {} takes {} channels, previous stage produces {expected_in}",
                    i + 1,
                    k.in_channels()
                )));
            }
            k.validate()?;
            expected_in = k.out_channels();
        }
        if expected_in != self.config.spectral_dim() {
            return Err(SaakError::InvalidModel(format!(
                "final spectral dimension {expected_in} differs from {}",
                self.config.spectral_dim()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let kernel_values: usize = self.stages.iter().map(|k| k.dim() * (k.dim() + 1)).sum();
        let mut out = Vec::with_capacity(64 + 8 * kernel_values + 12 * self.stages.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        for v in [self.config.spatial, self.config.stages, self.config.in_channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for k in &self.stages {
            for v in [k.stage_index(), k.in_channels(), k.dim()] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for v in k.eigenvalues().iter().chain(k.ac_kernels()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.meta.sample_count.to_le_bytes());
        out.extend_from_slice(&self.meta.digest);
        out
    }

    /// Parses and fully validates a model.
    pub fn from_reader<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_array(&mut r, &mut magic, "model magic")?;
        if &magic != MODEL_MAGIC {
            return Err(SaakError::Format(format!("bad model magic {magic:?}")));
        }
        let version = read_u32(&mut r, "model version")?;
        if version != MODEL_VERSION {
            return Err(SaakError::Format(format!("unsupported model version {version}")));
        }
        let spatial = read_u32(&mut r, "spatial")? as usize;
        let stages = read_u32(&mut r, "stage count")? as usize;
        let in_channels = read_u32(&mut r, "input channels")? as usize;
        let config = SaakConfig::new(spatial, stages, in_channels)
            .map_err(|e| SaakError::InvalidModel(e.to_string()))?;

        let mut kernels = Vec::with_capacity(stages);
        for _ in 0..stages {
            let stage_index = read_u32(&mut r, "stage index")? as usize;
            let stage_in = read_u32(&mut r, "stage input channels")? as usize;
            let dim = read_u32(&mut r, "stage dimension")? as usize;
            let geometry = StageGeometry {
                stage_index,
                spatial,
                in_channels: stage_in,
            };
            if geometry.dim() != dim {
                return Err(SaakError::InvalidModel(format!(
                    "stage {stage_index}: stored dim {dim} differs from {spatial}*{spatial}*{stage_in}"
                )));
            }
            // Guard the allocation below against corrupt headers.
            if stage_in != config.stage_in_channels(kernels.len() + 1) {
                return Err(SaakError::InvalidModel(format!(
                    "stage {stage_index}: {stage_in} input channels breaks channel chaining"
                )));
            }
            let eigenvalues = read_f64s(&mut r, dim, "eigenvalues")?;
            let ac = read_f64s(&mut r, dim * dim, "kernels")?;
            kernels.push(StageKernels::from_parts(geometry, eigenvalues, ac)?);
        }
        let mut count = [0u8; 8];
        read_exact_array(&mut r, &mut count, "sample count")?;
        let mut digest = [0u8; 32];
        read_exact_array(&mut r, &mut digest, "digest")?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(SaakError::Format("trailing bytes after model".into()));
        }
        SaakModel::new(
            config,
            kernels,
            TrainingMeta {
                sample_count: u64::from_le_bytes(count),
                digest,
            },
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| w.write_all(&self.to_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(open_file(path)?)
    }
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_array(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    read_exact_array(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn training_digest(images: &[ImageTensor], config: SaakConfig, sample_cap: usize, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in [config.spatial, config.stages, config.in_channels, sample_cap] {
        h.update((v as u64).to_le_bytes());
    }
    h.update(seed.to_le_bytes());
    for img in images {
        for v in [img.height(), img.width(), img.channels()] {
            h.update((v as u64).to_le_bytes());
        }
        for v in img.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Trains every stage in turn: stage `i` learns from the stage `i − 1`
/// outputs of all training images. When a stage has more than `sample_cap`
/// cuboids, a seeded uniform subsample of that size is used.
pub fn train_model(images: &[ImageTensor], config: SaakConfig, sample_cap: usize, seed: u64) -> Result<SaakModel> {
    config.validate()?;
    let first = images.first().ok_or(SaakError::Empty("no training images"))?;
    if sample_cap == 0 {
        return Err(SaakError::InvalidArgument("sample cap must be positive".into()));
    }
    for img in images {
        if img.shape() != first.shape() {
            return Err(SaakError::ShapeMismatch(format!(
                "training images differ in shape: {:?} vs {:?}",
                img.shape(),
                first.shape()
            )));
        }
    }
    config.check_image(first.height(), first.width(), first.channels())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current: Vec<Tensor3> = images.iter().map(|i| i.as_tensor().clone()).collect();
    let mut stages = Vec::with_capacity(config.stages);
    for stage_index in 1..=config.stages {
        let geometry = StageGeometry {
            stage_index,
            spatial: config.spatial,
            in_channels: current[0].channels(),
        };
        let mut cuboids = CuboidBatch::empty(geometry.dim());
        for t in &current {
            cuboids.extend(&partition_into_cuboids(t, config.spatial)?)?;
        }
        if cuboids.count() > sample_cap {
            let mut picked = index::sample(&mut rng, cuboids.count(), sample_cap).into_vec();
            picked.sort_unstable();
            cuboids = cuboids.select(&picked);
        }
        log::info!(
            "stage {stage_index}: training on {} cuboids of dim {}",
            cuboids.count(),
            geometry.dim()
        );
        let kernels = train_stage(&cuboids, geometry)?;
        drop(cuboids);
        if stage_index < config.stages {
            current = current
                .par_iter()
                .map(|t| forward_stage(t, &kernels).map(|c| c.into_tensor()))
                .collect::<Result<_>>()?;
        }
        stages.push(kernels);
    }
    let meta = TrainingMeta {
        sample_count: images.len() as u64,
        digest: training_digest(images, config, sample_cap, seed),
    };
    SaakModel::new(config, stages, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_images(n: usize, side: usize, seed: u64) -> Vec<ImageTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                ImageTensor::new(side, side, 3, (0..side * side * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn one_stage_channel_count() {
        let images = random_images(4, 8, 1);
        let m = train_model(&images, SaakConfig::new(2, 1, 3).unwrap(), 1000, 0).unwrap();
        assert_eq!(m.spectral_dim(), 13);
        assert_eq!(m.stages()[0].out_channels(), 13);
    }

    #[test]
    fn constant_image_gives_zero_spectra() {
        let img = ImageTensor::new(8, 8, 3, vec![0.4; 192]).unwrap();
        let m = train_model(&[img], SaakConfig::new(2, 2, 3).unwrap(), 1000, 0).unwrap();
        for k in m.stages() {
            assert!(k.eigenvalues().iter().all(|v| v.abs() <= 1e-12));
        }
        assert_eq!(m.spectral_dim(), 53);
    }

    #[test]
    fn deterministic_and_seed_sensitive_when_subsampling() {
        let images = random_images(6, 8, 2);
        let cfg = SaakConfig::new(2, 2, 3).unwrap();
        let a = train_model(&images, cfg, 50, 9).unwrap();
        let b = train_model(&images, cfg, 50, 9).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = train_model(&images, cfg, 50, 10).unwrap();
        assert_ne!(a.stages()[0], c.stages()[0]);
    }

    #[test]
    fn rejects_bad_training_sets() {
        let cfg = SaakConfig::new(2, 2, 3).unwrap();
        assert!(matches!(train_model(&[], cfg, 10, 0), Err(SaakError::Empty(_))));
        let mut images = random_images(2, 8, 3);
        images.push(random_images(1, 16, 4).pop().unwrap());
        assert!(matches!(train_model(&images, cfg, 10, 0), Err(SaakError::ShapeMismatch(_))));
        let odd = random_images(1, 6, 5);
        assert!(matches!(train_model(&odd, cfg, 10, 0), Err(SaakError::Incompatible { stage: 2, .. })));
    }

    #[test]
    fn bytes_round_trip() {
        let images = random_images(3, 8, 6);
        let m = train_model(&images, SaakConfig::new(2, 2, 3).unwrap(), 1000, 0).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"SAAK");
        let back = SaakModel::from_reader(&bytes[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn load_rejects_corruption() {
        let images = random_images(3, 8, 7);
        let m = train_model(&images, SaakConfig::new(2, 1, 3).unwrap(), 1000, 0).unwrap();
        let bytes = m.to_bytes();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(SaakModel::from_reader(&bad_magic[..]), Err(SaakError::Format(_))));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(SaakModel::from_reader(truncated).is_err());

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(SaakModel::from_reader(&trailing[..]), Err(SaakError::Format(_))));

        // perturb one kernel entry: orthonormality breaks
        let mut skewed = bytes.clone();
        let kernel_start = 4 + 4 + 12 + 12 + 12 * 8;
        let v = f64::from_le_bytes(skewed[kernel_start..kernel_start + 8].try_into().unwrap()) + 1e-3;
        skewed[kernel_start..kernel_start + 8].copy_from_slice(&v.to_le_bytes());
        assert!(matches!(SaakModel::from_reader(&skewed[..]), Err(SaakError::InvalidModel(_))));

        // swap eigenvalue order
        let mut unsorted = bytes.clone();
        let ev = 4 + 4 + 12 + 12;
        let (a, b) = (unsorted[ev..ev + 8].to_vec(), unsorted[ev + 8..ev + 16].to_vec());
        unsorted[ev..ev + 8].copy_from_slice(&b);
        unsorted[ev + 8..ev + 16].copy_from_slice(&a);
        assert!(matches!(SaakModel::from_reader(&unsorted[..]), Err(SaakError::InvalidModel(_))));
    }
}
