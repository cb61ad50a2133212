//! High-frequency coefficient filtering and the composed defense
//! `inverse(filter(forward(x)))`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaakError};
use crate::model::SaakModel;
use crate::tensor::{CoefficientTensor, ImageTensor};
use crate::transform::{forward, inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStrategy {
    /// Multiply by a factor in `[0, 1]`.
    Scale,
    /// Set to zero.
    Truncate,
    /// Clamp into `[-bound, bound]`.
    Clip,
}

impl fmt::Display for FilterStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterStrategy::Scale => "scale",
            FilterStrategy::Truncate => "truncate",
            FilterStrategy::Clip => "clip",
        })
    }
}

impl FromStr for FilterStrategy {
    type Err = SaakError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scale" => Ok(FilterStrategy::Scale),
            "truncate" | "truncation" => Ok(FilterStrategy::Truncate),
            "clip" | "clipping" => Ok(FilterStrategy::Clip),
            other => Err(SaakError::InvalidFilter(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Which channels to attenuate and how: the last `count` spectral channels
/// of the final stage, at every spatial location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub strategy: FilterStrategy,
    pub count: usize,
    /// Scale factor or clip bound; ignored for truncation.
    pub parameter: f64,
}

impl FilterSpec {
    pub const DEFAULT_SCALE: f64 = 0.25;
    pub const DEFAULT_CLIP: f64 = 0.02;

    pub fn new(strategy: FilterStrategy, count: usize, parameter: Option<f64>) -> Result<Self> {
        let parameter = parameter.unwrap_or(match strategy {
            FilterStrategy::Scale => Self::DEFAULT_SCALE,
            FilterStrategy::Clip => Self::DEFAULT_CLIP,
            FilterStrategy::Truncate => 0.0,
        });
        let spec = Self {
            strategy,
            count,
            parameter,
        };
        spec.check_parameter()?;
        Ok(spec)
    }

    pub fn truncate(count: usize) -> Self {
        Self {
            strategy: FilterStrategy::Truncate,
            count,
            parameter: 0.0,
        }
    }

    pub fn scale(count: usize, factor: f64) -> Result<Self> {
        Self::new(FilterStrategy::Scale, count, Some(factor))
    }

    pub fn clip(count: usize, bound: f64) -> Result<Self> {
        Self::new(FilterStrategy::Clip, count, Some(bound))
    }

    fn check_parameter(&self) -> Result<()> {
        let p = self.parameter;
        match self.strategy {
            FilterStrategy::Scale if !(0.0..=1.0).contains(&p) => Err(SaakError::InvalidFilter(format!(
                "scale factor {p} outside [0, 1]"
            ))),
            FilterStrategy::Clip if !(p.is_finite() && p > 0.0) => {
                Err(SaakError::InvalidFilter(format!("clip bound {p} must be positive")))
            }
            _ if !p.is_finite() => Err(SaakError::InvalidFilter("non-finite parameter".into())),
            _ => Ok(()),
        }
    }

    /// Checks the filter against a coefficient tensor with `channels` channels.
    pub fn validate(&self, channels: usize) -> Result<()> {
        self.check_parameter()?;
        if self.count > channels {
            return Err(SaakError::InvalidFilter(format!(
                "cannot filter {} of {channels} channels",
                self.count
            )));
        }
        Ok(())
    }

    #[inline]
    fn apply_value(&self, v: f64) -> f64 {
        match self.strategy {
            FilterStrategy::Scale => v * self.parameter,
            FilterStrategy::Truncate => 0.0,
            FilterStrategy::Clip => v.clamp(-self.parameter, self.parameter),
        }
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            FilterStrategy::Truncate => write!(f, "truncate:{}", self.count),
            _ => write!(f, "{}:{}:{}", self.strategy, self.count, self.parameter),
        }
    }
}

/// Filters channels `channels − count ..` in place.
pub fn apply_filter_in_place(c: &mut CoefficientTensor, spec: &FilterSpec) -> Result<()> {
    let channels = c.channels();
    spec.validate(channels)?;
    if spec.count == 0 {
        return Ok(());
    }
    let cut = channels - spec.count;
    for px in c.tensor_mut().data_mut().chunks_exact_mut(channels) {
        for v in &mut px[cut..] {
            *v = spec.apply_value(*v);
        }
    }
    Ok(())
}

pub fn apply_filter(c: &CoefficientTensor, spec: &FilterSpec) -> Result<CoefficientTensor> {
    let mut out = c.clone();
    apply_filter_in_place(&mut out, spec)?;
    Ok(out)
}

/// `inverse(filter(forward(img)))`.
pub fn defend(img: &ImageTensor, m: &SaakModel, spec: &FilterSpec, clamp: bool) -> Result<ImageTensor> {
    spec.validate(m.spectral_dim())?;
    let mut coeffs = forward(img, m)?;
    apply_filter_in_place(&mut coeffs, spec)?;
    inverse(&coeffs, m, clamp)
}

/// [`defend`] over a batch, parallel over images.
pub fn defend_batch(images: &[ImageTensor], m: &SaakModel, spec: &FilterSpec, clamp: bool) -> Result<Vec<ImageTensor>> {
    images.par_iter().map(|img| defend(img, m, spec, clamp)).collect()
}
