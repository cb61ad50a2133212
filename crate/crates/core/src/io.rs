//! File formats: raw `STNS` tensors, CIFAR-10 binary batches, atomic writes.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, SaakError};
use crate::tensor::{normalize_pixels, ImageTensor, Tensor3};

pub const TENSOR_MAGIC: &[u8; 4] = b"STNS";
pub const TENSOR_VERSION: u32 = 1;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;

pub(crate) fn read_exact_array<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => SaakError::Format(format!("truncated file while reading {what}")),
        _ => SaakError::Io(e),
    })
}

pub(crate) fn file_error(path: &Path) -> impl FnOnce(io::Error) -> SaakError + '_ {
    move |source| SaakError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(file_error(path))
}

pub(crate) fn open_file(path: &Path) -> Result<io::BufReader<fs::File>> {
    Ok(io::BufReader::new(fs::File::open(path).map_err(file_error(path))?))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| SaakError::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        let f = w.into_inner().map_err(|e| e.into_error())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(file_error(path))
}

/// An n-dimensional array of reals as stored in a `STNS` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        match expected {
            Some(n) if n == data.len() => Ok(Self { dims, data }),
            Some(n) => Err(SaakError::LengthMismatch {
                expected: n,
                actual: data.len(),
            }),
            None => Err(SaakError::Format("tensor dimensions overflow".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut word = [0u8; 4];
        read_exact_array(&mut r, &mut word, "tensor magic")?;
        if &word != TENSOR_MAGIC {
            return Err(SaakError::Format(format!("bad tensor magic {word:?}")));
        }
        read_exact_array(&mut r, &mut word, "tensor version")?;
        let version = u32::from_le_bytes(word);
        if version != TENSOR_VERSION {
            return Err(SaakError::Format(format!("unsupported tensor version {version}")));
        }
        read_exact_array(&mut r, &mut word, "tensor rank")?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank * 4 > r.len() {
            return Err(SaakError::Format(format!("rank {rank} exceeds file size")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact_array(&mut r, &mut word, "tensor dims")?;
            dims.push(u32::from_le_bytes(word) as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| SaakError::Format("tensor dimensions overflow".into()))?;
        if r.len() != count * 8 {
            return Err(SaakError::Format(format!(
                "payload has {} bytes, dims {dims:?} need {}",
                r.len(),
                count * 8
            )));
        }
        let data = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        write_atomic(path, |w| w.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Packs images of one shape into a rank-3 (single image) or rank-4
/// (`N × H × W × C`) raw tensor.
pub fn images_to_raw(images: &[ImageTensor]) -> Result<RawTensor> {
    let first = images.first().ok_or(SaakError::Empty("no images to store"))?;
    let (h, w, c) = first.shape();
    if images.iter().any(|i| i.shape() != (h, w, c)) {
        return Err(SaakError::ShapeMismatch("images in one tensor file must share a shape".into()));
    }
    let data: Vec<f64> = images.iter().flat_map(|i| i.data().iter().copied()).collect();
    if images.len() == 1 {
        RawTensor::new(vec![h, w, c], data)
    } else {
        RawTensor::new(vec![images.len(), h, w, c], data)
    }
}

/// Unpacks a rank-3 or rank-4 raw tensor into images.
pub fn raw_to_images(raw: &RawTensor) -> Result<Vec<ImageTensor>> {
    let (n, h, w, c) = match raw.dims.as_slice() {
        [h, w, c] => (1, *h, *w, *c),
        [n, h, w, c] => (*n, *h, *w, *c),
        other => {
            return Err(SaakError::Format(format!(
                "image tensors must have rank 3 or 4, got dims {other:?}"
            )))
        }
    };
    let per = h * w * c;
    (0..n)
        .map(|i| ImageTensor::new(h, w, c, raw.data[i * per..(i + 1) * per].to_vec()))
        .collect()
}

pub fn save_images(path: &Path, images: &[ImageTensor]) -> Result<()> {
    images_to_raw(images)?.save(path)
}

pub fn load_images(path: &Path) -> Result<Vec<ImageTensor>> {
    raw_to_images(&RawTensor::load(path)?)
}

pub fn save_tensor(path: &Path, t: &Tensor3) -> Result<()> {
    RawTensor::new(vec![t.height(), t.width(), t.channels()], t.data().to_vec())?.save(path)
}

/// Decodes CIFAR-10 binary records: one label byte, then 1024 red, 1024
/// green and 1024 blue bytes, each plane row-major.
pub fn decode_cifar10(bytes: &[u8]) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(SaakError::Format(format!(
            "CIFAR-10 batch of {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut interleaved = vec![0u8; CIFAR_PIXELS];
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(SaakError::Format(format!("record {i}: label {label} >= {CIFAR_CLASSES}")));
        }
        let pixels = &record[1..];
        for p in 0..plane {
            for c in 0..CIFAR_CHANNELS {
                interleaved[p * CIFAR_CHANNELS + c] = pixels[c * plane + p];
            }
        }
        images.push(normalize_pixels(&interleaved, CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS)?);
        labels.push(label);
    }
    Ok((images, labels))
}

/// Encodes images back into CIFAR-10 records (values are clamped and rounded
/// to bytes).
pub fn encode_cifar10(images: &[ImageTensor], labels: &[usize]) -> Result<Vec<u8>> {
    if images.len() != labels.len() {
        return Err(SaakError::LengthMismatch {
            expected: images.len(),
            actual: labels.len(),
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(images.len() * CIFAR_RECORD);
    for (img, &label) in images.iter().zip(labels) {
        if img.shape() != (CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS) {
            return Err(SaakError::ShapeMismatch(format!("CIFAR-10 images are 32x32x3, got {:?}", img.shape())));
        }
        if label >= CIFAR_CLASSES {
            return Err(SaakError::LabelOutOfRange {
                label,
                classes: CIFAR_CLASSES,
            });
        }
        out.push(label as u8);
        let bytes = crate::tensor::denormalize_clamp(img);
        for c in 0..CIFAR_CHANNELS {
            for p in 0..plane {
                out.push(bytes[p * CIFAR_CHANNELS + c]);
            }
        }
    }
    Ok(out)
}

pub fn load_cifar10_batch(path: &Path) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    decode_cifar10(&read_file(path)?)
}

/// Path of the optional label sidecar of a tensor file: `x.stns` → `x.labels.json`.
pub fn labels_sidecar(path: &Path) -> PathBuf {
    path.with_extension("labels.json")
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let json = serde_json::to_vec(labels)?;
    write_atomic(path, |w| w.write_all(&json))
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

/// A labelled (or unlabelled) image collection read from disk.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<ImageTensor>,
    pub labels: Option<Vec<usize>>,
}

/// Which records of a dataset to keep.
#[derive(Debug, Clone, Default)]
pub struct DatasetFilter {
    /// Keep only these labels, relabelled to their position in the list.
    pub classes: Option<Vec<usize>>,
    /// Keep at most this many images (after class filtering).
    pub limit: Option<usize>,
}

impl Dataset {
    /// Reads a CIFAR-10 batch (`.bin`), a tensor file (`.stns`, with an
    /// optional label sidecar), or every such file in a directory in name
    /// order.
    pub fn load(path: &Path, filter: &DatasetFilter) -> Result<Self> {
        let files = dataset_files(path)?;
        if files.is_empty() {
            return Err(SaakError::InvalidArgument(format!("no .bin or .stns files under {}", path.display())));
        }
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut all_labelled = true;
        for f in &files {
            let (imgs, lbls) = if f.extension().is_some_and(|e| e == "bin") {
                let (i, l) = load_cifar10_batch(f)?;
                (i, Some(l))
            } else {
                let imgs = load_images(f)?;
                let side = labels_sidecar(f);
                let lbls = if side.exists() { Some(load_labels(&side)?) } else { None };
                if let Some(l) = &lbls {
                    if l.len() != imgs.len() {
                        return Err(SaakError::LengthMismatch {
                            expected: imgs.len(),
                            actual: l.len(),
                        });
                    }
                }
                (imgs, lbls)
            };
            match lbls {
                Some(l) => labels.extend(l),
                None => all_labelled = false,
            }
            images.extend(imgs);
        }
        let mut labels = all_labelled.then_some(labels);
        if let Some(classes) = &filter.classes {
            let lbls = labels
                .as_ref()
                .ok_or_else(|| SaakError::InvalidArgument("class filter needs labelled data".into()))?;
            let mut kept_images = Vec::new();
            let mut kept_labels = Vec::new();
            for (img, l) in images.into_iter().zip(lbls) {
                if let Some(pos) = classes.iter().position(|c| c == l) {
                    kept_images.push(img);
                    kept_labels.push(pos);
                }
            }
            images = kept_images;
            labels = Some(kept_labels);
        }
        if let Some(limit) = filter.limit {
            images.truncate(limit);
            if let Some(l) = labels.as_mut() {
                l.truncate(limit);
            }
        }
        Ok(Self { images, labels })
    }
}

/// The `.bin`/`.stns` files at `path` (a file or a directory), sorted by name.
pub fn dataset_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(file_error(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "bin" || e == "stns"))
        .collect();
    files.sort();
    Ok(files)
}
