//! C ABI over the `saak` crate.
//!
//! Every entry point returns a [`SaakStatus`]; on failure the message is
//! available from [`saak_last_error_message`] on the same thread. Images and
//! coefficient tensors are passed as row-major `height × width × channels`
//! buffers of `double` with the channel index fastest.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use saak::filter::{defend, FilterSpec, FilterStrategy};
use saak::tensor::{CoefficientTensor, ImageTensor, Tensor3};
use saak::{forward, inverse, SaakError, SaakModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaakStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Image or coefficient geometry does not fit the model.
    Shape = 3,
    /// Output buffer length differs from the required length.
    BufferSize = 4,
    Io = 5,
    /// Malformed model file.
    Format = 6,
    Numerical = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaakFilter {
    Truncate = 0,
    Scale = 1,
    Clip = 2,
}

/// Opaque handle to a loaded model.
pub struct SaakModelHandle {
    model: SaakModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(SaakStatus, String);

impl From<SaakError> for Failure {
    fn from(e: SaakError) -> Self {
        let status = match &e {
            SaakError::NotDivisible { .. }
            | SaakError::ShapeMismatch(_)
            | SaakError::LengthMismatch { .. }
            | SaakError::Incompatible { .. } => SaakStatus::Shape,
            SaakError::Io(_) | SaakError::File { .. } => SaakStatus::Io,
            SaakError::InvalidModel(_) | SaakError::Format(_) | SaakError::Json(_) => SaakStatus::Format,
            SaakError::NotSymmetric(_)
            | SaakError::NoConvergence { .. }
            | SaakError::NegativeEigenvalue { .. }
            | SaakError::NonFiniteLoss(_) => SaakStatus::Numerical,
            _ => SaakStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: SaakStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SaakStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaakStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SaakStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(SaakStatus::NullPointer, format!("{what} is null"))
    } else {
        Ok(())
    }
}

unsafe fn model_ref<'a>(h: *const SaakModelHandle) -> Result<&'a SaakModel, Failure> {
    non_null(h, "model handle")?;
    Ok(&(*h).model)
}

fn checked_len(height: usize, width: usize, channels: usize) -> Result<usize, Failure> {
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .map_or_else(|| fail(SaakStatus::InvalidArgument, "tensor size overflows"), Ok)
}

unsafe fn read_buffer(p: *const f64, len: usize, what: &str) -> Result<Vec<f64>, Failure> {
    if len == 0 {
        return Ok(Vec::new());
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts(p, len).to_vec())
}

unsafe fn write_buffer(src: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out_len != src.len() {
        return fail(
            SaakStatus::BufferSize,
            format!("output buffer holds {out_len} values, {} required", src.len()),
        );
    }
    if src.is_empty() {
        return Ok(());
    }
    non_null(out, "output buffer")?;
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn read_image(
    image: *const f64,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ImageTensor, Failure> {
    let len = checked_len(height, width, channels)?;
    let data = read_buffer(image, len, "image")?;
    Ok(ImageTensor::new(height, width, channels, data)?)
}

/// Final-stage coefficient geometry for an image of the given shape.
fn coefficient_shape(m: &SaakModel, height: usize, width: usize, channels: usize) -> Result<[usize; 3], Failure> {
    let cfg = m.config();
    cfg.check_image(height, width, channels)?;
    let shrink = cfg.footprint();
    Ok([height / shrink, width / shrink, m.spectral_dim()])
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn saak_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL if the last
/// call succeeded. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn saak_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Loads a model file. On success `*out` owns a handle that must be released
/// with [`saak_model_free`].
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saak_model_load(path: *const c_char, out: *mut *mut SaakModelHandle) -> SaakStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(SaakStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        let model = SaakModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(SaakModelHandle { model }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `handle` must come from [`saak_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn saak_model_free(handle: *mut SaakModelHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Writes the model's block side, stage count and input channel count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saak_model_config(
    handle: *const SaakModelHandle,
    spatial: *mut usize,
    stages: *mut usize,
    in_channels: *mut usize,
) -> SaakStatus {
    guard(|| {
        let m = model_ref(handle)?;
        non_null(spatial, "spatial")?;
        non_null(stages, "stages")?;
        non_null(in_channels, "in_channels")?;
        let cfg = m.config();
        *spatial = cfg.spatial;
        *stages = cfg.stages;
        *in_channels = cfg.in_channels;
        Ok(())
    })
}

/// Number of final-stage coefficient channels.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saak_model_spectral_dim(handle: *const SaakModelHandle, out: *mut usize) -> SaakStatus {
    guard(|| {
        let m = model_ref(handle)?;
        non_null(out, "out")?;
        *out = m.spectral_dim();
        Ok(())
    })
}

/// Shape of the coefficient tensor produced for an image of the given shape.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saak_coefficient_shape(
    handle: *const SaakModelHandle,
    height: usize,
    width: usize,
    channels: usize,
    out_height: *mut usize,
    out_width: *mut usize,
    out_channels: *mut usize,
) -> SaakStatus {
    guard(|| {
        let m = model_ref(handle)?;
        non_null(out_height, "out_height")?;
        non_null(out_width, "out_width")?;
        non_null(out_channels, "out_channels")?;
        let [h, w, c] = coefficient_shape(m, height, width, channels)?;
        *out_height = h;
        *out_width = w;
        *out_channels = c;
        Ok(())
    })
}

/// Forward transform of one image into `out`, whose length must equal the
/// product of the dimensions from [`saak_coefficient_shape`].
///
/// # Safety
/// `image` must hold `height·width·channels` values and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn saak_forward(
    handle: *const SaakModelHandle,
    image: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
    out_len: usize,
) -> SaakStatus {
    guard(|| {
        let m = model_ref(handle)?;
        let img = read_image(image, height, width, channels)?;
        let c = forward(&img, m)?;
        write_buffer(c.as_tensor().data(), out, out_len)
    })
}

/// Inverse transform of final-stage coefficients back to an image of shape
/// `height × width × channels`. With `clamp`, pixels are clipped to `[0, 1]`.
///
/// # Safety
/// `coefficients` must hold `coefficients_len` values and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn saak_inverse(
    handle: *const SaakModelHandle,
    coefficients: *const f64,
    coefficients_len: usize,
    height: usize,
    width: usize,
    channels: usize,
    clamp: bool,
    out: *mut f64,
    out_len: usize,
) -> SaakStatus {
    guard(|| {
        let m = model_ref(handle)?;
        let [ch, cw, cc] = coefficient_shape(m, height, width, channels)?;
        let expected = checked_len(ch, cw, cc)?;
        if coefficients_len != expected {
            return fail(
                SaakStatus::BufferSize,
                format!("coefficient buffer holds {coefficients_len} values, {expected} required"),
            );
        }
        let data = read_buffer(coefficients, expected, "coefficients")?;
        let c = CoefficientTensor::new(m.config().stages, Tensor3::new(ch, cw, cc, data)?)?;
        let img = inverse(&c, m, clamp)?;
        write_buffer(img.data(), out, out_len)
    })
}

/// Filters the `count` lowest-variance AC channels of the image's
/// coefficients and reconstructs. `parameter` is the scale factor or clip
/// bound; a negative value selects the default, and truncation ignores it.
///
/// # Safety
/// `image` must hold `height·width·channels` values and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn saak_defend(
    handle: *const SaakModelHandle,
    image: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    filter: SaakFilter,
    count: usize,
    parameter: f64,
    clamp: bool,
    out: *mut f64,
    out_len: usize,
) -> SaakStatus {
    guard(|| {
        let m = model_ref(handle)?;
        let strategy = match filter {
            SaakFilter::Truncate => FilterStrategy::Truncate,
            SaakFilter::Scale => FilterStrategy::Scale,
            SaakFilter::Clip => FilterStrategy::Clip,
        };
        let parameter = (parameter >= 0.0 || parameter.is_nan()).then_some(parameter);
        let spec = FilterSpec::new(strategy, count, parameter)?;
        let img = read_image(image, height, width, channels)?;
        let defended = defend(&img, m, &spec, clamp)?;
        write_buffer(defended.data(), out, out_len)
    })
}
