//! Spatial mean/median filters, used as a baseline and as an optional
//! post-processing step after the spectral defense.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaakError};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    Mean,
    Median,
}

impl fmt::Display for SmoothingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmoothingKind::Mean => "mean",
            SmoothingKind::Median => "median",
        })
    }
}

impl FromStr for SmoothingKind {
    type Err = SaakError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(SmoothingKind::Mean),
            "median" => Ok(SmoothingKind::Median),
            other => Err(SaakError::InvalidArgument(format!("unknown smoothing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Smoothing {
    pub kind: SmoothingKind,
    pub kernel: usize,
}

impl Smoothing {
    pub fn new(kind: SmoothingKind, kernel: usize) -> Result<Self> {
        if !(2..=3).contains(&kernel) {
            return Err(SaakError::InvalidArgument(format!("smoothing kernel {kernel} must be 2 or 3")));
        }
        Ok(Self { kind, kernel })
    }

    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        smooth(img, self.kind, self.kernel)
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}x{}", self.kind, self.kernel, self.kernel)
    }
}

/// Mirror index without repeating the edge sample: `-1 → 1`, `n → n-2`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-channel `k×k` mean or median with reflected borders. Odd windows are
/// centred; even windows start at the pixel and extend down and right.
pub fn smooth(img: &ImageTensor, kind: SmoothingKind, k: usize) -> Result<ImageTensor> {
    let spec = Smoothing::new(kind, k)?;
    let (h, w, c) = img.shape();
    let offset = if spec.kernel % 2 == 1 { (spec.kernel / 2) as isize } else { 0 };
    let mut window = vec![0.0; k * k];
    let mut out = vec![0.0; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut n = 0;
                for dy in 0..k as isize {
                    let sy = reflect(y as isize + dy - offset, h);
                    for dx in 0..k as isize {
                        let sx = reflect(x as isize + dx - offset, w);
                        window[n] = img.get(sy, sx, ch);
                        n += 1;
                    }
                }
                out[(y * w + x) * c + ch] = match kind {
                    SmoothingKind::Mean => window.iter().sum::<f64>() / (k * k) as f64,
                    SmoothingKind::Median => median(&mut window),
                };
            }
        }
    }
    ImageTensor::new(h, w, c, out)
}

pub fn mean_smooth(img: &ImageTensor, k: usize) -> Result<ImageTensor> {
    smooth(img, SmoothingKind::Mean, k)
}

pub fn median_smooth(img: &ImageTensor, k: usize) -> Result<ImageTensor> {
    smooth(img, SmoothingKind::Median, k)
}
