//! C interface to the binloc localizer.
//!
//! Models are opaque handles created from a model JSON document and freed
//! with [`binloc_model_free`]. Every fallible call returns a [`BinlocStatus`];
//! on failure a description is available from [`binloc_last_error`] on the
//! same thread until the next failing call.
//!
//! Feature buffers are row-major `D × T`: entry `(d, t)` lives at
//! `d * num_frames + t`. Masks use the same layout, nonzero meaning active.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use binloc::gllim::GllimModel;
use binloc::posterior::PosteriorEngine;
use binloc::spectro::BinauralSpectrogram;
use binloc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinlocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Trained model prepared for localization.
pub struct BinlocModel {
    engine: PosteriorEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> BinlocStatus {
    match err {
        Error::DimensionMismatch(_) => BinlocStatus::DimensionMismatch,
        Error::Io(_) => BinlocStatus::Io,
        Error::Json(_) | Error::Format(_) | Error::Version { .. } | Error::Csv(_) | Error::Wav(_) => {
            BinlocStatus::Format
        }
        Error::NotPositiveDefinite(_) | Error::TrainingCollapsed(_) | Error::Degenerate(_) => BinlocStatus::Numeric,
        _ => BinlocStatus::InvalidArgument,
    }
}

fn fail(status: BinlocStatus, msg: impl Into<String>) -> BinlocStatus {
    set_error(msg);
    status
}

/// Runs `f`, recording its error and converting panics into a status.
fn guard(f: impl FnOnce() -> Result<(), BinlocStatus>) -> BinlocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BinlocStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(BinlocStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn check<T>(r: binloc::Result<T>) -> Result<T, BinlocStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, BinlocStatus> {
    if p.is_null() {
        return Err(fail(BinlocStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BinlocStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(model: *const BinlocModel) -> Result<&'a BinlocModel, BinlocStatus> {
    model
        .as_ref()
        .ok_or_else(|| fail(BinlocStatus::NullPointer, "model handle is null"))
}

fn build_model(model: binloc::Result<GllimModel>, out: *mut *mut BinlocModel) -> Result<(), BinlocStatus> {
    let engine = check(model.and_then(|m| PosteriorEngine::new(&m)))?;
    let handle = Box::new(BinlocModel { engine });
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

unsafe fn spectrogram(
    engine: &PosteriorEngine,
    features: *const f64,
    mask: *const u8,
    num_frames: usize,
) -> Result<BinauralSpectrogram, BinlocStatus> {
    if features.is_null() || mask.is_null() {
        return Err(fail(BinlocStatus::NullPointer, "features or mask is null"));
    }
    if num_frames == 0 {
        return Err(fail(BinlocStatus::InvalidArgument, "num_frames must be >= 1"));
    }
    let n = engine.d() * num_frames;
    let values = std::slice::from_raw_parts(features, n).to_vec();
    let active = std::slice::from_raw_parts(mask, n).iter().map(|&m| m != 0).collect();
    check(BinauralSpectrogram::from_raw(engine.d(), num_frames, values, active))
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn binloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn binloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model JSON file into `*out`.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_load(path: *const c_char, out: *mut *mut BinlocModel) -> BinlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(BinlocStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        build_model(GllimModel::load(Path::new(path)), out)
    })
}

/// Parses a model JSON document into `*out`.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_from_json(json: *const c_char, out: *mut *mut BinlocModel) -> BinlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(BinlocStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let json = c_str(json, "json")?;
        build_model(GllimModel::from_json(json), out)
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_free(model: *mut BinlocModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension `D` expected per frame, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_feature_dim(model: *const BinlocModel) -> usize {
    model.as_ref().map_or(0, |m| m.engine.d())
}

/// Length of an estimate: 2 per source, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_estimate_len(model: *const BinlocModel) -> usize {
    model.as_ref().map_or(0, |m| m.engine.l())
}

/// Localizes from a masked feature matrix.
///
/// `features` and `mask` hold `D × num_frames` entries. `estimate` receives
/// `binloc_model_estimate_len` values as azimuth/elevation pairs in degrees;
/// `estimate_len` is its capacity.
#[no_mangle]
pub unsafe extern "C" fn binloc_localize(
    model: *const BinlocModel,
    features: *const f64,
    mask: *const u8,
    num_frames: usize,
    estimate: *mut f64,
    estimate_len: usize,
) -> BinlocStatus {
    guard(|| {
        let m = model_ref(model)?;
        if estimate.is_null() {
            return Err(fail(BinlocStatus::NullPointer, "estimate is null"));
        }
        let l = m.engine.l();
        if estimate_len < l {
            return Err(fail(
                BinlocStatus::BufferTooSmall,
                format!("estimate buffer holds {estimate_len} values, need {l}"),
            ));
        }
        let spec = spectrogram(&m.engine, features, mask, num_frames)?;
        let report = check(m.engine.localize(&spec))?;
        std::slice::from_raw_parts_mut(estimate, l).copy_from_slice(&report.estimate);
        Ok(())
    })
}

/// Localizes and returns the full report as a JSON string in `*out`.
/// Free it with [`binloc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn binloc_localize_json(
    model: *const BinlocModel,
    features: *const f64,
    mask: *const u8,
    num_frames: usize,
    out: *mut *mut c_char,
) -> BinlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(BinlocStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let m = model_ref(model)?;
        let spec = spectrogram(&m.engine, features, mask, num_frames)?;
        let report = check(m.engine.localize(&spec))?;
        let text = check(serde_json::to_string(&report).map_err(Error::from))?;
        let c = CString::new(text).expect("JSON has no NUL bytes");
        *out = c.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn binloc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
