use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use cmlrain::eval::metrics;
use cmlrain::model::{checkpoint, predict, ModelKind, ModelParams, ModelSpec};
use cmlrain::rng::SeedRng;
use cmlrain_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let needed = unsafe { cml_last_error(buf.as_mut_ptr(), buf.len()) };
    let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(needed, msg.len() + 1);
    msg
}

fn spec() -> ModelSpec {
    ModelSpec { kind: ModelKind::TabGru, d_model: 8, n_heads: 2, n_encoder_layers: 1, gru_hidden: 4, window_len: 30, n_features: 3, ..Default::default() }
}

#[test]
fn model_load_predict_free() {
    let s = spec();
    let params = ModelParams::init(&s, &mut SeedRng::new(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &s, &params).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model: *mut CmlModel = ptr::null_mut();
    assert_eq!(unsafe { cml_model_load(c_path.as_ptr(), &mut model) }, CmlStatus::CML_OK);
    assert!(!model.is_null());
    assert_eq!(unsafe { cml_model_window_len(model) }, 30);
    assert_eq!(unsafe { cml_model_n_features(model) }, 3);

    let mut rng = SeedRng::new(3);
    let x: Vec<f64> = (0..2 * 30 * 3).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    let mut out = [f64::NAN; 2];
    assert_eq!(unsafe { cml_model_predict(model, x.as_ptr(), 2, out.as_mut_ptr()) }, CmlStatus::CML_OK);
    let want = predict(&s, &params, &cmlrain::autodiff::Tensor::new(vec![2, 30, 3], x.clone()).unwrap(), 2).unwrap();
    assert_eq!(out.to_vec(), want);
    assert!(last_error().is_empty());

    let mut bad = x.clone();
    bad[5] = f64::NAN;
    assert_eq!(unsafe { cml_model_predict(model, bad.as_ptr(), 2, out.as_mut_ptr()) }, CmlStatus::CML_ERR_DATA);
    assert!(last_error().contains("non-finite"));
    unsafe { cml_model_free(model) };
    unsafe { cml_model_free(ptr::null_mut()) };
}

#[test]
fn load_errors_carry_messages() {
    let mut model: *mut CmlModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/m.ckpt").unwrap();
    assert_eq!(unsafe { cml_model_load(missing.as_ptr(), &mut model) }, CmlStatus::CML_ERR_DATA);
    assert!(model.is_null());
    assert!(last_error().contains("/nonexistent/m.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_ne!(unsafe { cml_model_load(junk.as_ptr(), &mut model) }, CmlStatus::CML_OK);
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { cml_model_load(ptr::null(), &mut model) }, CmlStatus::CML_ERR_ARGUMENT);
    assert_eq!(unsafe { cml_model_window_len(ptr::null()) }, 0);
}

#[test]
fn last_error_truncates_safely() {
    let mut model: *mut CmlModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/a/long/path/m.ckpt").unwrap();
    unsafe { cml_model_load(missing.as_ptr(), &mut model) };
    let mut small = [1 as std::ffi::c_char; 8];
    let needed = unsafe { cml_last_error(small.as_mut_ptr(), small.len()) };
    assert!(needed > 8);
    assert_eq!(small[7], 0);
    assert_eq!(unsafe { cml_last_error(ptr::null_mut(), 0) }, needed);
}

#[test]
fn metrics_match_library() {
    let y = [0.0, 1.0, 4.0, 2.5, 0.3];
    let p = [0.1, 0.8, 3.0, 2.9, 0.0];
    let mut m = CmlMetrics::default();
    assert_eq!(unsafe { cml_metrics(y.as_ptr(), p.as_ptr(), 5, &mut m) }, CmlStatus::CML_OK);
    let want = metrics(&y, &p).unwrap();
    assert_eq!((m.n, m.rmse, m.mae), (want.n, want.rmse, want.mae));
    assert_eq!(Some(m.r2), want.r2);
    assert_eq!(Some(m.pcc), want.pcc);

    let flat = [1.0, 1.0, 1.0];
    assert_eq!(unsafe { cml_metrics(flat.as_ptr(), p.as_ptr(), 3, &mut m) }, CmlStatus::CML_OK);
    assert!(m.r2.is_nan() && m.pcc.is_nan());
    assert_eq!(unsafe { cml_metrics(y.as_ptr(), p.as_ptr(), 1, &mut m) }, CmlStatus::CML_ERR_DATA);
}

#[test]
fn power_law_round_trip() {
    for r in [0.1, 1.0, 10.0, 50.0] {
        let att = cml_pl_attenuation(r, 0.37, 0.85, 1.28);
        assert!(((cml_pl_invert(att, 0.37, 0.85, 1.28, 0.0) - r) / r).abs() < 1e-10);
    }
    assert_eq!(cml_pl_invert(0.5, 0.37, 0.85, 1.28, 1.0), 0.0);
}

#[test]
fn event_count() {
    let mut rate = vec![0.0; 300];
    rate[10..50].iter_mut().for_each(|v| *v = 2.0);
    rate[200..240].iter_mut().for_each(|v| *v = 2.0);
    let mut n = 0usize;
    assert_eq!(unsafe { cml_count_events(rate.as_ptr(), rate.len(), &mut n) }, CmlStatus::CML_OK);
    assert_eq!(n, 2);
    assert_eq!(unsafe { cml_count_events(ptr::null(), 0, &mut n) }, CmlStatus::CML_ERR_ARGUMENT);
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cml_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cmlrain.h")).unwrap();
    for name in [
        "cml_version", "cml_last_error", "cml_model_load", "cml_model_free", "cml_model_window_len",
        "cml_model_n_features", "cml_model_predict", "cml_metrics", "cml_pl_invert", "cml_pl_attenuation",
        "cml_count_events", "typedef struct CmlModel CmlModel", "CML_ERR_DIVERGED = 4",
    ] {
        assert!(header.contains(name), "{name}");
    }
    // syntax-check with the system C compiler when one is installed
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", concat!(env!("CARGO_MANIFEST_DIR"), "/include/cmlrain.h")])
        .status()
    else {
        return;
    };
    assert!(status.success());
}

/// Builds and runs a C program against the static library.
#[test]
fn c_program_links_against_static_library() {
    let target_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target_dir.join("libcmlrain_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler unavailable");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let status = Command::new("cc")
        .arg(format!("{manifest}/tests/c/smoke.c"))
        .arg(format!("-I{manifest}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
