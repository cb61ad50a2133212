//! Dense `height × width × channels` tensors and block partitioning.
//!
//! Every tensor in the crate stores its values row-major with the channel
//! index fastest: element `(y, x, c)` lives at `(y * width + x) * channels + c`.
//! Cuboids cut from a tensor are flattened in the same order, so the value at
//! block-local position `(y, x, c)` of an `s × s` cuboid sits at
//! `(y * s + x) * channels + c`.

use std::ops::Deref;

use crate::error::{Axis, Result, SaakError};

/// Plain dense 3-D array in channel-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(SaakError::ShapeMismatch(format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(SaakError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(SaakError::InvalidArgument(format!(
                "non-finite tensor value at flat index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    /// The `channels`-long spectral vector at one spatial location.
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = self.index(y, x, 0);
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let start = self.index(y, x, 0);
        &mut self.data[start..start + self.channels]
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pixel-domain image with values nominally in `[0, 1]`.
///
/// Construction only checks finiteness: reconstructions may leave the unit
/// range until [`ImageTensor::clamped`] or [`denormalize_clamp`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Tensor3);

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Tensor3::new(height, width, channels, data).map(Self)
    }

    pub fn from_tensor(t: Tensor3) -> Self {
        Self(t)
    }

    pub fn as_tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    pub fn clamped(mut self) -> Self {
        for v in self.0.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

impl Deref for ImageTensor {
    type Target = Tensor3;

    fn deref(&self) -> &Tensor3 {
        &self.0
    }
}

/// Spatial-spectral coefficients produced by stage `stage` of a transform.
///
/// Channel 0 at each location is the DC coefficient; the remaining channels
/// are AC coefficients ordered by non-increasing training eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    stage: usize,
    tensor: Tensor3,
}

impl CoefficientTensor {
    pub fn new(stage: usize, tensor: Tensor3) -> Result<Self> {
        if stage == 0 {
            return Err(SaakError::InvalidArgument(
                "coefficient stage index starts at 1".into(),
            ));
        }
        Ok(Self { stage, tensor })
    }

    pub(crate) fn from_parts(stage: usize, tensor: Tensor3) -> Self {
        debug_assert!(stage >= 1);
        Self { stage, tensor }
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn as_tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor3 {
        &mut self.tensor
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.tensor
    }
}

impl Deref for CoefficientTensor {
    type Target = Tensor3;

    fn deref(&self) -> &Tensor3 {
        &self.tensor
    }
}

/// A batch of flattened cuboids, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CuboidBatch {
    count: usize,
    dim: usize,
    data: Vec<f64>,
}

impl CuboidBatch {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(SaakError::InvalidArgument("cuboid dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(SaakError::LengthMismatch {
                expected: (data.len() / dim + 1) * dim,
                actual: data.len(),
            });
        }
        Ok(Self {
            count: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            count: 0,
            dim,
            data: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn extend(&mut self, other: &CuboidBatch) -> Result<()> {
        if other.dim != self.dim {
            return Err(SaakError::ShapeMismatch(format!(
                "cannot append cuboids of dim {} to batch of dim {}",
                other.dim, self.dim
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.count += other.count;
        Ok(())
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> CuboidBatch {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        CuboidBatch {
            count: rows.len(),
            dim: self.dim,
            data,
        }
    }

    /// Reassembles the cuboids into a dense `height × width × channels` tensor.
    pub fn assemble(&self, height: usize, width: usize, channels: usize, s: usize) -> Result<Tensor3> {
        check_divisible(height, width, s)?;
        let (bh, bw) = (height / s, width / s);
        if self.count != bh * bw {
            return Err(SaakError::ShapeMismatch(format!(
                "expected {} cuboids for a {height}x{width} grid with block side {s}, got {}",
                bh * bw,
                self.count
            )));
        }
        if self.dim != s * s * channels {
            return Err(SaakError::ShapeMismatch(format!(
                "cuboid dim {} does not equal {s}*{s}*{channels}",
                self.dim
            )));
        }
        let mut out = Tensor3::zeros(height, width, channels);
        let row_len = s * channels;
        for by in 0..bh {
            for bx in 0..bw {
                let cuboid = self.row(by * bw + bx);
                for dy in 0..s {
                    let dst = out.index(by * s + dy, bx * s, 0);
                    out.data[dst..dst + row_len]
                        .copy_from_slice(&cuboid[dy * row_len..(dy + 1) * row_len]);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_divisible(height: usize, width: usize, s: usize) -> Result<()> {
    if s == 0 {
        return Err(SaakError::InvalidArgument("block side must be positive".into()));
    }
    if !height.is_multiple_of(s) {
        return Err(SaakError::NotDivisible {
            axis: Axis::Height,
            size: height,
            block: s,
        });
    }
    if !width.is_multiple_of(s) {
        return Err(SaakError::NotDivisible {
            axis: Axis::Width,
            size: width,
            block: s,
        });
    }
    Ok(())
}

/// Cuts `t` into non-overlapping `s × s × channels` cuboids, enumerated
/// row-major over the block grid.
pub fn partition_into_cuboids(t: &Tensor3, s: usize) -> Result<CuboidBatch> {
    check_divisible(t.height, t.width, s)?;
    let (bh, bw) = (t.height / s, t.width / s);
    let dim = s * s * t.channels;
    let row_len = s * t.channels;
    let mut data = Vec::with_capacity(bh * bw * dim);
    for by in 0..bh {
        for bx in 0..bw {
            for dy in 0..s {
                let src = t.index(by * s + dy, bx * s, 0);
                data.extend_from_slice(&t.data[src..src + row_len]);
            }
        }
    }
    Ok(CuboidBatch {
        count: bh * bw,
        dim,
        data,
    })
}

/// Maps bytes to reals by `v / 255`.
pub fn normalize_pixels(raw: &[u8], height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
    let expected = height * width * channels;
    if raw.len() != expected {
        return Err(SaakError::LengthMismatch {
            expected,
            actual: raw.len(),
        });
    }
    ImageTensor::new(
        height,
        width,
        channels,
        raw.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
}

/// Maps reals back to bytes by `round(255 * clamp(v, 0, 1))`.
pub fn denormalize_clamp(t: &Tensor3) -> Vec<u8> {
    t.data()
        .iter()
        .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor3 {
        Tensor3::new(h, w, c, (0..h * w * c).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn single_block_flattening() {
        let t = Tensor3::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = partition_into_cuboids(&t, 2).unwrap();
        assert_eq!(b.count(), 1);
        assert_eq!(b.row(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn blocks_enumerated_row_major() {
        let t = ramp(4, 4, 1);
        let b = partition_into_cuboids(&t, 2).unwrap();
        assert_eq!(b.count(), 4);
        assert_eq!(b.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(b.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(b.row(2), &[8.0, 9.0, 12.0, 13.0]);
        assert_eq!(b.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn channel_fastest_within_cuboid() {
        let t = ramp(2, 2, 3);
        let b = partition_into_cuboids(&t, 2).unwrap();
        assert_eq!(b.dim(), 12);
        assert_eq!(b.row(0), t.data());
    }

    #[test]
    fn rejects_indivisible_axis() {
        let t = ramp(4, 6, 1);
        match partition_into_cuboids(&t, 4) {
            Err(SaakError::NotDivisible { axis: Axis::Width, size: 6, block: 4 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let t = ramp(3, 4, 1);
        assert!(matches!(
            partition_into_cuboids(&t, 2),
            Err(SaakError::NotDivisible { axis: Axis::Height, .. })
        ));
    }

    #[test]
    fn assemble_single_cuboid() {
        let b = CuboidBatch::new(4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = b.assemble(2, 2, 1, 2).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn assemble_rejects_wrong_count() {
        let b = CuboidBatch::new(4, vec![0.0; 12]).unwrap();
        assert!(matches!(b.assemble(4, 4, 1, 2), Err(SaakError::ShapeMismatch(_))));
        assert!(matches!(b.assemble(2, 6, 2, 2), Err(SaakError::ShapeMismatch(_))));
    }

    #[test]
    fn moving_one_pixel_touches_one_cuboid_entry() {
        let base = Tensor3::zeros(8, 8, 3);
        let before = partition_into_cuboids(&base, 2).unwrap();
        for (y, x, c) in [(0, 0, 0), (3, 5, 2), (7, 7, 1), (4, 1, 0)] {
            let mut t = base.clone();
            let i = t.index(y, x, c);
            t.data_mut()[i] = 1.0;
            let after = partition_into_cuboids(&t, 2).unwrap();
            let changed: Vec<usize> = before
                .data()
                .iter()
                .zip(after.data())
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(changed.len(), 1);
            let row = changed[0] / after.dim();
            let col = changed[0] % after.dim();
            assert_eq!(row, (y / 2) * 4 + x / 2);
            assert_eq!(col, ((y % 2) * 2 + x % 2) * 3 + c);
        }
    }

    #[test]
    fn byte_round_trip_is_identity() {
        let raw: Vec<u8> = (0..=255).collect();
        let img = normalize_pixels(&raw, 1, 256, 1).unwrap();
        assert_eq!(img.data()[255], 1.0);
        assert_eq!(img.data()[0], 0.0);
        assert_eq!(denormalize_clamp(&img), raw);
    }

    #[test]
    fn denormalize_clamps_out_of_range() {
        let t = Tensor3::new(1, 3, 1, vec![1.2, -0.3, 0.5]).unwrap();
        assert_eq!(denormalize_clamp(&t), vec![255, 0, 128]);
    }

    #[test]
    fn normalize_length_mismatch() {
        assert!(matches!(
            normalize_pixels(&[0u8; 5], 2, 2, 1),
            Err(SaakError::LengthMismatch { expected: 4, actual: 5 })
        ));
    }

    proptest! {
        #[test]
        fn partition_assemble_inverse(
            bh in 1usize..=8, bw in 1usize..=8, c in 1usize..=3, s in 1usize..=4, seed in any::<u64>()
        ) {
            let (h, w) = (bh * s, bw * s);
            prop_assume!(h <= 32 && w <= 32);
            let data: Vec<f64> = (0..h * w * c)
                .map(|i| ((i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed) >> 11) as f64)
                .collect();
            let t = Tensor3::new(h, w, c, data).unwrap();
            let b = partition_into_cuboids(&t, s).unwrap();
            prop_assert_eq!(b.count(), bh * bw);
            prop_assert_eq!(b.dim(), s * s * c);
            // exhaustive index check against the documented formula
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let row = (y / s) * bw + x / s;
                        let col = ((y % s) * s + x % s) * c + ch;
                        prop_assert_eq!(b.row(row)[col], t.get(y, x, ch));
                    }
                }
            }
            let back = b.assemble(h, w, c, s).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
