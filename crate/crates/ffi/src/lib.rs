//! C ABI over `odt-core`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! an [`OdtStatus`]; on failure the message is available from
//! [`odt_last_error_message`] on the same thread until the next failing call.
//! Strings returned by the library are freed with [`odt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array3;
use num_complex::Complex64;
use odt_core::calibration::{apply_calibration, calibrate_dataset};
use odt_core::dataset::AcquisitionDataset;
use odt_core::error::OdtError;
use odt_core::forward::RiVolume;
use odt_core::io::{load_dataset, load_manifest, load_volume, save_dataset, save_volume};
use odt_core::reconstruct::{reconstruct, ReconstructionConfig, ReconstructionResult};
use odt_core::stitch::{build_blend_masks, place_chain, stitch, DEFAULT_MIN_CONFIDENCE};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    InvalidDimensions = 10,
    InvalidParameter = 11,
    GridMismatch = 12,
    OutOfBandIllumination = 13,
    NegativeIntensity = 14,
    InconsistentDataset = 15,
    Diverged = 16,
    NoReliableOverlap = 17,
    Schema = 18,
    PayloadLength = 19,
    NonFinitePayload = 20,
    Io = 21,
    Image = 22,
    Panic = 99,
}

impl From<&OdtError> for OdtStatus {
    fn from(e: &OdtError) -> Self {
        match e {
            OdtError::InvalidDimensions(_) => OdtStatus::InvalidDimensions,
            OdtError::InvalidParameter { .. } => OdtStatus::InvalidParameter,
            OdtError::GridMismatch(_) => OdtStatus::GridMismatch,
            OdtError::OutOfBandIllumination { .. } => OdtStatus::OutOfBandIllumination,
            OdtError::NegativeIntensity { .. } => OdtStatus::NegativeIntensity,
            OdtError::InconsistentDataset(_) => OdtStatus::InconsistentDataset,
            OdtError::Diverged { .. } => OdtStatus::Diverged,
            OdtError::NoReliableOverlap { .. } => OdtStatus::NoReliableOverlap,
            OdtError::Schema { .. } => OdtStatus::Schema,
            OdtError::PayloadLength { .. } => OdtStatus::PayloadLength,
            OdtError::NonFinitePayload { .. } => OdtStatus::NonFinitePayload,
            OdtError::Io { .. } => OdtStatus::Io,
            OdtError::Image { .. } => OdtStatus::Image,
        }
    }
}

/// Complex refractive-index volume, `(layers, nx, ny)` with `ny` fastest.
pub struct OdtVolume(RiVolume);

/// Intensity images with their illuminations and acquisition geometry.
pub struct OdtDataset(AcquisitionDataset);

/// Outcome of a reconstruction: volume and per-epoch cost.
pub struct OdtReconstruction(ReconstructionResult);

struct Failure(OdtStatus, String);

impl From<OdtError> for Failure {
    fn from(e: OdtError) -> Self {
        Failure(OdtStatus::from(&e), e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OdtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OdtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            OdtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OdtStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(OdtStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior nul removed").into_raw()
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn odt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn odt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn odt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- volume ----

/// Builds a volume from separate real and imaginary buffers of
/// `layers * nx * ny` values each, `ny` fastest.
///
/// # Safety
/// `re` and `im` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odt_volume_new(
    layers: usize,
    nx: usize,
    ny: usize,
    dz_um: f64,
    pixel_pitch_um: f64,
    n_medium: f64,
    re: *const f64,
    im: *const f64,
    out: *mut *mut OdtVolume,
) -> OdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if re.is_null() || im.is_null() {
            return Err(null("re/im"));
        }
        let count = layers
            .checked_mul(nx)
            .and_then(|v| v.checked_mul(ny))
            .ok_or_else(|| Failure(OdtStatus::InvalidDimensions, "volume size overflows".into()))?;
        let re = std::slice::from_raw_parts(re, count);
        let im = std::slice::from_raw_parts(im, count);
        let values = re.iter().zip(im).map(|(r, i)| Complex64::new(*r, *i)).collect();
        let n = Array3::from_shape_vec((layers, nx, ny), values).expect("length matches shape");
        let v = RiVolume::new(n, dz_um, pixel_pitch_um, n_medium)?;
        *out = Box::into_raw(Box::new(OdtVolume(v)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odt_volume_load(path: *const c_char, out: *mut *mut OdtVolume) -> OdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let v = load_volume(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(OdtVolume(v)));
        Ok(())
    })
}

/// # Safety
/// `volume` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn odt_volume_save(volume: *const OdtVolume, path: *const c_char) -> OdtStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        save_volume(&v.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Writes `[layers, nx, ny]` into `dims`.
///
/// # Safety
/// `volume` must be a live handle; `dims` must hold three values.
#[no_mangle]
pub unsafe extern "C" fn odt_volume_dims(volume: *const OdtVolume, dims: *mut usize) -> OdtStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let (l, x, y) = v.0.dim();
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&[l, x, y]);
        Ok(())
    })
}

/// Copies the real and imaginary parts into `re` and `im`, each of
/// capacity `len`. Fails with `BufferTooSmall` if `len` is short.
///
/// # Safety
/// `volume` must be a live handle; `re` and `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn odt_volume_copy(volume: *const OdtVolume, re: *mut f64, im: *mut f64, len: usize) -> OdtStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        if re.is_null() || im.is_null() {
            return Err(null("re/im"));
        }
        let count = v.0.values().len();
        if len < count {
            return Err(Failure(
                OdtStatus::BufferTooSmall,
                format!("buffers hold {len} values, volume has {count}"),
            ));
        }
        let (re, im) = (std::slice::from_raw_parts_mut(re, count), std::slice::from_raw_parts_mut(im, count));
        for ((n, r), i) in v.0.values().iter().zip(re).zip(im) {
            *r = n.re;
            *i = n.im;
        }
        Ok(())
    })
}

/// # Safety
/// `volume` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn odt_volume_free(volume: *mut OdtVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

// --------------------------------------------------------------- dataset ----

/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odt_dataset_load(path: *const c_char, out: *mut *mut OdtDataset) -> OdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = load_dataset(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(OdtDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn odt_dataset_save(dataset: *const OdtDataset, path: *const c_char) -> OdtStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        save_dataset(&ds.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of angles, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odt_dataset_len(dataset: *const OdtDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Estimates every illumination wavevector. `out` receives the corrected
/// dataset; `report_json`, if not null, receives the per-angle report.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odt_calibrate(
    dataset: *const OdtDataset,
    out: *mut *mut OdtDataset,
    report_json: *mut *mut c_char,
) -> OdtStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let out = out_ptr(out, "out")?;
        let result = calibrate_dataset(&ds.0)?;
        if let Some(r) = report_json.as_mut() {
            *r = into_c_string(serde_json::to_string(&result.report()).expect("report serializes"));
        }
        *out = Box::into_raw(Box::new(OdtDataset(apply_calibration(&ds.0, &result))));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn odt_dataset_free(dataset: *mut OdtDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

// -------------------------------------------------------- reconstruction ----

/// Runs the solver. `config_json` may be null for defaults; omitted keys
/// take their default values.
///
/// # Safety
/// `dataset` must be a live handle; `config_json` null or nul-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn odt_reconstruct(
    dataset: *const OdtDataset,
    config_json: *const c_char,
    out: *mut *mut OdtReconstruction,
) -> OdtStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let out = out_ptr(out, "out")?;
        let cfg: ReconstructionConfig = if config_json.is_null() {
            ReconstructionConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Failure(OdtStatus::Schema, format!("config: {e}")))?
        };
        let result = reconstruct(&ds.0, &cfg)?;
        *out = Box::into_raw(Box::new(OdtReconstruction(result)));
        Ok(())
    })
}

/// Number of completed epochs, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odt_reconstruction_epochs(result: *const OdtReconstruction) -> usize {
    result.as_ref().map_or(0, |r| r.0.history.len())
}

/// Copies the per-epoch cost into `cost` of capacity `len`.
///
/// # Safety
/// `result` must be a live handle; `cost` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn odt_reconstruction_cost(result: *const OdtReconstruction, cost: *mut f64, len: usize) -> OdtStatus {
    guard(|| {
        let r = handle(result, "result")?;
        if cost.is_null() {
            return Err(null("cost"));
        }
        let h = &r.0.history.cost;
        if len < h.len() {
            return Err(Failure(
                OdtStatus::BufferTooSmall,
                format!("buffer holds {len} values, history has {}", h.len()),
            ));
        }
        std::slice::from_raw_parts_mut(cost, h.len()).copy_from_slice(h);
        Ok(())
    })
}

/// Copies the reconstructed volume into a new handle.
///
/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn odt_reconstruction_volume(result: *const OdtReconstruction, out: *mut *mut OdtVolume) -> OdtStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(OdtVolume(r.0.volume.clone())));
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn odt_reconstruction_free(result: *mut OdtReconstruction) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

// --------------------------------------------------------------- stitch ----

/// Registers and fuses the volumes listed in a manifest file. A
/// non-positive `min_confidence` selects the manifest's value or the default.
///
/// # Safety
/// `manifest_path` must be nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn odt_stitch_manifest(
    manifest_path: *const c_char,
    min_confidence: f64,
    out: *mut *mut OdtVolume,
) -> OdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let manifest = load_manifest(&path_arg(manifest_path, "manifest_path")?)?;
        let threshold = if min_confidence > 0.0 {
            min_confidence
        } else {
            manifest.min_confidence.unwrap_or(DEFAULT_MIN_CONFIDENCE)
        };
        let volumes = manifest
            .volumes
            .iter()
            .map(|p| load_volume(p))
            .collect::<Result<Vec<_>, _>>()?;
        let (placed, _) = place_chain(volumes, threshold)?;
        let fused = stitch(&placed, &build_blend_masks(&placed)?)?;
        *out = Box::into_raw(Box::new(OdtVolume(fused)));
        Ok(())
    })
}
