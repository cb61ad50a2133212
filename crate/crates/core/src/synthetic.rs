//! Seeded two-class 32×32×3 image generator, used when the real dataset is
//! not available. Each image is a random field with a natural-image-like
//! power-law spectrum, plus a weak class-dependent low-frequency pattern and
//! white pixel noise, clamped to `[0, 1]`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub side: usize,
    /// Amplitude of the class pattern.
    pub signal: f64,
    /// Standard deviation of the white pixel noise.
    pub noise: f64,
    /// Background amplitude falls off as `1 / f^exponent`.
    pub exponent: f64,
    /// Overall background amplitude.
    pub texture: f64,
    /// Highest background frequency, in cycles per image.
    pub max_frequency: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            side: 32,
            signal: 0.05,
            noise: 0.01,
            exponent: 1.0,
            texture: 0.1,
            max_frequency: 16,
        }
    }
}

fn class_pattern(label: usize, y: f64, x: f64, c: usize) -> f64 {
    // class 0: warm diagonal stripes; class 1: cool rings
    let tint = [1.0, 0.6, -0.4];
    match label {
        0 => (2.0 * PI * (x + y)).cos() * tint[c],
        _ => (2.0 * PI * 1.5 * ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt()).cos() * tint[2 - c],
    }
}

/// Random field with a power-law amplitude spectrum, shared across channels
/// with a per-channel gain.
fn background(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let side = spec.side;
    let mut field = vec![0.0; side * side];
    let mut cos_y = vec![0.0; side];
    let mut cos_x = vec![0.0; side];
    let mut sin_y = vec![0.0; side];
    let mut sin_x = vec![0.0; side];
    let f_max = spec.max_frequency as i64;
    for fy in 0..=f_max {
        for fx in -f_max..=f_max {
            if fy == 0 && fx <= 0 {
                continue;
            }
            let f = ((fy * fy + fx * fx) as f64).sqrt();
            let amp = spec.texture * rng.gen_range(0.0..1.0) / f.powf(spec.exponent);
            let phase = rng.gen_range(0.0..2.0 * PI);
            // cos(a + b + φ) = cos(a)cos(b + φ) − sin(a)sin(b + φ)
            for i in 0..side {
                let t = i as f64 / side as f64;
                let a = 2.0 * PI * fy as f64 * t;
                let b = 2.0 * PI * fx as f64 * t + phase;
                cos_y[i] = a.cos();
                sin_y[i] = a.sin();
                cos_x[i] = b.cos();
                sin_x[i] = b.sin();
            }
            for yi in 0..side {
                let row = &mut field[yi * side..(yi + 1) * side];
                for (xi, v) in row.iter_mut().enumerate() {
                    *v += amp * (cos_y[yi] * cos_x[xi] - sin_y[yi] * sin_x[xi]);
                }
            }
        }
    }
    field
}

/// `n` images with labels alternating `0, 1, 0, …`.
pub fn two_class_images(n: usize, spec: &SyntheticSpec, seed: u64) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).expect("finite noise level");
    let side = spec.side;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let base: [f64; 3] = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
        let gain: [f64; 3] = [rng.gen_range(0.7..1.3), rng.gen_range(0.7..1.3), rng.gen_range(0.7..1.3)];
        let field = background(spec, &mut rng);
        let strength = spec.signal * rng.gen_range(0.5..1.5);
        let mut data = Vec::with_capacity(side * side * 3);
        for yi in 0..side {
            let y = yi as f64 / side as f64;
            for xi in 0..side {
                let x = xi as f64 / side as f64;
                for c in 0..3 {
                    let v = base[c]
                        + gain[c] * field[yi * side + xi]
                        + strength * class_pattern(label, y, x, c)
                        + noise.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        images.push(ImageTensor::new(side, side, 3, data)?);
        labels.push(label);
    }
    Ok((images, labels))
}
