//! C ABI over the inference-side pieces of `cmlrain`: checkpoint loading and
//! prediction, metrics, power-law inversion and event counting.
//!
//! Every fallible call returns a [`CmlStatus`]; on failure the message is
//! kept per thread and read back with [`cml_last_error`]. No call unwinds
//! across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cmlrain::autodiff::Tensor;
use cmlrain::eval::{detect_events, metrics};
use cmlrain::ingest::{TimeSeries, Unit};
use cmlrain::model::{checkpoint, predict, ModelParams, ModelSpec};
use cmlrain::pl::{invert_power_law, power_law_attenuation};

/// Result codes; 2, 3 and 4 match the command-line exit codes.
#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmlStatus {
    CML_OK = 0,
    CML_ERR_ARGUMENT = 1,
    CML_ERR_CONFIG = 2,
    CML_ERR_DATA = 3,
    CML_ERR_DIVERGED = 4,
    CML_ERR_PANIC = 5,
}

/// Trained model loaded from a checkpoint. Opaque to C.
pub struct CmlModel {
    spec: ModelSpec,
    params: ModelParams,
}

/// Scores of an estimate against observations. `r2` and `pcc` are NaN when
/// undefined (constant series).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CmlMetrics {
    pub n: usize,
    pub rmse: f64,
    pub r2: f64,
    pub pcc: f64,
    pub mae: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: CmlStatus, msg: impl Into<String>) -> CmlStatus {
    set_error(msg.into());
    status
}

fn from_error(e: cmlrain::Error) -> CmlStatus {
    let status = match e.exit_code() {
        2 => CmlStatus::CML_ERR_CONFIG,
        4 => CmlStatus::CML_ERR_DIVERGED,
        _ => CmlStatus::CML_ERR_DATA,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> CmlStatus) -> CmlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == CmlStatus::CML_OK {
                set_error(String::new());
            }
            s
        }
        Err(_) => fail(CmlStatus::CML_ERR_PANIC, "internal panic"),
    }
}

/// Null-terminated library version. Static storage; do not free.
#[no_mangle]
pub extern "C" fn cml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always null-terminated when `cap > 0`) and returns the full message
/// length plus one. An empty message means the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cml_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Loads a checkpoint written by `cmlrain train` or `cmlrain reproduce`.
///
/// # Safety
/// `path` must be a null-terminated string and `out` a valid pointer. On
/// success `*out` owns a model that must be released with [`cml_model_free`].
#[no_mangle]
pub unsafe extern "C" fn cml_model_load(path: *const c_char, out: *mut *mut CmlModel) -> CmlStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(CmlStatus::CML_ERR_ARGUMENT, "null argument");
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(CmlStatus::CML_ERR_ARGUMENT, "path is not UTF-8");
        };
        match checkpoint::load(Path::new(p)) {
            Ok((spec, params)) => {
                *out = Box::into_raw(Box::new(CmlModel { spec, params }));
                CmlStatus::CML_OK
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must be null or a pointer from [`cml_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cml_model_free(model: *mut CmlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input window length in minutes, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cml_model_window_len(model: *const CmlModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.window_len)
}

/// Features per minute, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cml_model_n_features(model: *const CmlModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.n_features)
}

/// Rain rate (mm/h) for `batch` windows. `inputs` is row-major
/// `[batch][window_len][n_features]` of already scaled features; `out`
/// receives `batch` values.
///
/// # Safety
/// `model` must be live, `inputs` must hold `batch * window_len *
/// n_features` doubles and `out` must hold `batch` doubles.
#[no_mangle]
pub unsafe extern "C" fn cml_model_predict(
    model: *const CmlModel,
    inputs: *const f64,
    batch: usize,
    out: *mut f64,
) -> CmlStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(CmlStatus::CML_ERR_ARGUMENT, "null model");
        };
        if inputs.is_null() || out.is_null() || batch == 0 {
            return fail(CmlStatus::CML_ERR_ARGUMENT, "null buffer or empty batch");
        }
        let (l, f) = (m.spec.window_len, m.spec.n_features);
        let x = std::slice::from_raw_parts(inputs, batch * l * f).to_vec();
        if x.iter().any(|v| !v.is_finite()) {
            return fail(CmlStatus::CML_ERR_DATA, "inputs contain non-finite values");
        }
        let run = Tensor::new(vec![batch, l, f], x).and_then(|x| predict(&m.spec, &m.params, &x, batch));
        match run {
            Ok(y) => {
                std::slice::from_raw_parts_mut(out, batch).copy_from_slice(&y);
                CmlStatus::CML_OK
            }
            Err(e) => from_error(e),
        }
    })
}

/// RMSE, R², PCC and MAE of `yhat` against `y`, both of length `n >= 2`.
///
/// # Safety
/// `y` and `yhat` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cml_metrics(y: *const f64, yhat: *const f64, n: usize, out: *mut CmlMetrics) -> CmlStatus {
    guard(|| {
        if y.is_null() || yhat.is_null() || out.is_null() {
            return fail(CmlStatus::CML_ERR_ARGUMENT, "null argument");
        }
        let (y, p) = (std::slice::from_raw_parts(y, n), std::slice::from_raw_parts(yhat, n));
        match metrics(y, p) {
            Ok(m) => {
                *out = CmlMetrics {
                    n: m.n,
                    rmse: m.rmse,
                    r2: m.r2.unwrap_or(f64::NAN),
                    pcc: m.pcc.unwrap_or(f64::NAN),
                    mae: m.mae,
                };
                CmlStatus::CML_OK
            }
            Err(e) => from_error(e),
        }
    })
}

/// Rain rate (mm/h) from path attenuation: `(max(A - waa, 0) / (a L))^(1/b)`.
#[no_mangle]
pub extern "C" fn cml_pl_invert(attenuation_db: f64, a: f64, b: f64, length_km: f64, waa_db: f64) -> f64 {
    invert_power_law(attenuation_db, a, b, length_km, waa_db)
}

/// Path attenuation (dB) for a rain rate: `a R^b L`.
#[no_mangle]
pub extern "C" fn cml_pl_attenuation(rate_mm_h: f64, a: f64, b: f64, length_km: f64) -> f64 {
    power_law_attenuation(rate_mm_h, a, b, length_km)
}

/// Number of rain events in a 1-minute rate series (mm/h).
///
/// # Safety
/// `rate` must hold `n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cml_count_events(rate: *const f64, n: usize, out: *mut usize) -> CmlStatus {
    guard(|| {
        if rate.is_null() || out.is_null() || n == 0 {
            return fail(CmlStatus::CML_ERR_ARGUMENT, "null argument or empty series");
        }
        let values = std::slice::from_raw_parts(rate, n);
        if values.iter().any(|v| !v.is_finite()) {
            return fail(CmlStatus::CML_ERR_DATA, "rate contains non-finite values");
        }
        let run = TimeSeries::from_values(chrono::DateTime::UNIX_EPOCH, 60, values, Unit::MmPerH)
            .and_then(|s| detect_events(&s));
        match run {
            Ok(ev) => {
                *out = ev.len();
                CmlStatus::CML_OK
            }
            Err(e) => from_error(e),
        }
    })
}
