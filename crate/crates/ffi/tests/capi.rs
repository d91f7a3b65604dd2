use std::ffi::{CStr, CString};
use std::ptr;

use binloc::gllim::synthetic::{random_model, RandomModelSpec};
use binloc::gllim::GllimModel;
use binloc::posterior::PosteriorEngine;
use binloc::spectro::BinauralSpectrogram;
use binloc_ffi::*;

const D: usize = 6;
const T: usize = 4;

fn model() -> GllimModel {
    random_model(
        &RandomModelSpec {
            k: 3,
            l: 2,
            d: D,
            ..RandomModelSpec::default()
        },
        11,
    )
}

fn load(m: &GllimModel) -> *mut BinlocModel {
    let json = CString::new(m.to_json().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { binloc_model_from_json(json.as_ptr(), &mut handle) };
    assert_eq!(status, BinlocStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn inputs() -> (Vec<f64>, Vec<u8>) {
    let features: Vec<f64> = (0..D * T).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.5).collect();
    let mask: Vec<u8> = (0..D * T).map(|i| u8::from(i % 3 != 0)).collect();
    (features, mask)
}

fn last_error() -> String {
    let p = binloc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn localize_matches_engine() {
    let m = model();
    let handle = load(&m);
    unsafe {
        assert_eq!(binloc_model_feature_dim(handle), D);
        assert_eq!(binloc_model_estimate_len(handle), 2);
    }
    let (features, mask) = inputs();
    let mut estimate = [0.0; 2];
    let status =
        unsafe { binloc_localize(handle, features.as_ptr(), mask.as_ptr(), T, estimate.as_mut_ptr(), estimate.len()) };
    assert_eq!(status, BinlocStatus::Ok);

    let spec = BinauralSpectrogram::from_raw(D, T, features.clone(), mask.iter().map(|&v| v != 0).collect()).unwrap();
    let report = PosteriorEngine::new(&m).unwrap().localize(&spec).unwrap();
    assert_eq!(estimate.to_vec(), report.estimate);

    let mut json = ptr::null_mut();
    let status = unsafe { binloc_localize_json(handle, features.as_ptr(), mask.as_ptr(), T, &mut json) };
    assert_eq!(status, BinlocStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { binloc_string_free(json) };
    assert_eq!(text, serde_json::to_string(&report).unwrap());
    unsafe { binloc_model_free(handle) };
}

#[test]
fn load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model().save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { binloc_model_load(cpath.as_ptr(), &mut handle) }, BinlocStatus::Ok);
    unsafe { binloc_model_free(handle) };

    let missing = CString::new(dir.path().join("absent.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { binloc_model_load(missing.as_ptr(), &mut handle) }, BinlocStatus::Io);
    assert!(handle.is_null());
}

#[test]
fn error_codes_and_messages() {
    let bad = CString::new("{\"version\": 1}").unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { binloc_model_from_json(bad.as_ptr(), &mut handle) }, BinlocStatus::Format);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { binloc_model_from_json(ptr::null(), &mut handle) }, BinlocStatus::NullPointer);
    assert!(last_error().contains("json"));

    let handle = load(&model());
    let (features, mask) = inputs();
    let mut estimate = [0.0; 1];
    let status =
        unsafe { binloc_localize(handle, features.as_ptr(), mask.as_ptr(), T, estimate.as_mut_ptr(), estimate.len()) };
    assert_eq!(status, BinlocStatus::BufferTooSmall);

    let mut estimate = [0.0; 2];
    let status = unsafe { binloc_localize(handle, features.as_ptr(), mask.as_ptr(), 0, estimate.as_mut_ptr(), 2) };
    assert_eq!(status, BinlocStatus::InvalidArgument);
    let status = unsafe { binloc_localize(handle, ptr::null(), mask.as_ptr(), T, estimate.as_mut_ptr(), 2) };
    assert_eq!(status, BinlocStatus::NullPointer);
    let status = unsafe { binloc_localize(ptr::null(), features.as_ptr(), mask.as_ptr(), T, estimate.as_mut_ptr(), 2) };
    assert_eq!(status, BinlocStatus::NullPointer);

    let mut nonfinite = features.clone();
    let active = mask.iter().position(|&v| v != 0).unwrap();
    nonfinite[active] = f64::NAN;
    let status = unsafe { binloc_localize(handle, nonfinite.as_ptr(), mask.as_ptr(), T, estimate.as_mut_ptr(), 2) };
    assert_eq!(status, BinlocStatus::InvalidArgument);
    assert!(last_error().contains("non-finite"));
    unsafe { binloc_model_free(handle) };
}

#[test]
fn errors_are_thread_local() {
    let mut handle = ptr::null_mut();
    unsafe { binloc_model_from_json(ptr::null(), &mut handle) };
    std::thread::spawn(|| assert!(binloc_last_error().is_null())).join().unwrap();
    assert!(!binloc_last_error().is_null());
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        binloc_model_free(ptr::null_mut());
        binloc_string_free(ptr::null_mut());
        assert_eq!(binloc_model_feature_dim(ptr::null()), 0);
    }
    let v = unsafe { CStr::from_ptr(binloc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_exports() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/binloc.h")).unwrap();
    for name in [
        "binloc_last_error",
        "binloc_version",
        "binloc_model_load",
        "binloc_model_from_json",
        "binloc_model_free",
        "binloc_model_feature_dim",
        "binloc_model_estimate_len",
        "binloc_localize",
        "binloc_localize_json",
        "binloc_string_free",
        "BINLOC_STATUS_BUFFER_TOO_SMALL",
        "typedef struct BinlocModel BinlocModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
