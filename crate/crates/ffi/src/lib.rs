//! C ABI over `knn-calibrate`.
//!
//! Every fallible function returns a status code (`KC_OK` on success) and
//! writes results through out-pointers. On failure a message is kept per
//! thread and can be read with [`kc_last_error_message`]. Stores and
//! parameters are opaque handles released with their `_free` functions.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use knn_calibrate::pipeline::{self, RunConfig};
use knn_calibrate::{
    build_store, calibrated_loss, factor_value, knn_predict, load_store, Error, Metric, ModulatingFactor, ProbDist,
    RawEmbeddings,
};

pub const KC_OK: i32 = 0;
/// A required pointer argument was null.
pub const KC_NULL_POINTER: i32 = 1;
/// An argument failed validation (ranges, lengths, unknown enum values, bad config).
pub const KC_INVALID_ARGUMENT: i32 = 2;
/// Input data was malformed: bad file contents, non-finite values, labels out of range.
pub const KC_DATA: i32 = 3;
pub const KC_IO: i32 = 4;
pub const KC_RUNTIME: i32 = 5;
/// A Rust panic was caught at the boundary.
pub const KC_PANIC: i32 = 6;

pub const KC_METRIC_EUCLIDEAN: u32 = 0;
pub const KC_METRIC_COSINE: u32 = 1;

pub const KC_FACTOR_FOCAL: u32 = 0;
pub const KC_FACTOR_NLL: u32 = 1;

/// Normalized embedding datastore.
pub struct KcStore {
    inner: knn_calibrate::EmbeddingStore,
}

/// Trained classifier parameters.
pub struct KcParams {
    inner: knn_calibrate::ClassifierParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => KC_IO,
            Error::InvalidParameter(_)
            | Error::ShapeMismatch { .. }
            | Error::NotUnitNorm { .. }
            | Error::ExcludeOutOfRange { .. }
            | Error::EmptyNeighbors
            | Error::EmptyStore => KC_INVALID_ARGUMENT,
            e if e.is_data_error() => KC_DATA,
            _ => KC_RUNTIME,
        };
        Failure::new(code, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KC_OK,
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.code
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {detail}"));
            KC_PANIC
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer to a live value.
    unsafe { p.as_ref() }.ok_or_else(|| Failure::new(KC_NULL_POINTER, format!("{name} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::new(KC_NULL_POINTER, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::new(KC_NULL_POINTER, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(KC_NULL_POINTER, format!("{name} is null")))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::new(KC_NULL_POINTER, format!("{name} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(KC_INVALID_ARGUMENT, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn config_arg(p: *const c_char) -> Result<RunConfig, Failure> {
    if p.is_null() {
        return Ok(RunConfig::default());
    }
    let text = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(KC_INVALID_ARGUMENT, "config is not UTF-8"))?;
    let config: RunConfig =
        serde_json::from_str(text).map_err(|e| Failure::new(KC_INVALID_ARGUMENT, format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn metric_arg(metric: u32) -> Result<Metric, Failure> {
    match metric {
        KC_METRIC_EUCLIDEAN => Ok(Metric::Euclidean),
        KC_METRIC_COSINE => Ok(Metric::Cosine),
        other => Err(Failure::new(KC_INVALID_ARGUMENT, format!("unknown metric {other}"))),
    }
}

fn factor_arg(kind: u32, param: f64) -> Result<ModulatingFactor, Failure> {
    match kind {
        KC_FACTOR_FOCAL => Ok(ModulatingFactor::Focal { gamma: param }),
        KC_FACTOR_NLL => Ok(ModulatingFactor::Nll { alpha: param }),
        other => Err(Failure::new(
            KC_INVALID_ARGUMENT,
            format!("unknown factor kind {other}"),
        )),
    }
}

fn write_probs(dist: &ProbDist, out: &mut [f64]) -> Result<(), Failure> {
    if out.len() != dist.len() {
        return Err(Failure::new(
            KC_INVALID_ARGUMENT,
            format!("output buffer holds {} values, need {}", out.len(), dist.len()),
        ));
    }
    out.copy_from_slice(dist.probs());
    Ok(())
}

fn probdist(values: &[f64], name: &str) -> Result<ProbDist, Failure> {
    ProbDist::new(values.to_vec()).map_err(|e| Failure::new(KC_INVALID_ARGUMENT, format!("{name}: {e}")))
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn kc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `.femb` store, or normalizes a TSV embedding file.
#[no_mangle]
pub unsafe extern "C" fn kc_store_load(path: *const c_char, out: *mut *mut KcStore) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path, "path")?;
        let inner = match knn_calibrate::FileFormat::from_path(&path) {
            knn_calibrate::FileFormat::Binary => load_store(&path)?,
            format => build_store(knn_calibrate::load_embeddings(&path, format)?)?,
        };
        *out = Box::into_raw(Box::new(KcStore { inner }));
        Ok(())
    })
}

/// Builds a store from `n` row-major vectors of length `dim`; rows are
/// L2-normalized.
#[no_mangle]
pub unsafe extern "C" fn kc_store_from_raw(
    vectors: *const f32,
    n: usize,
    dim: usize,
    labels: *const u32,
    classes: usize,
    out: *mut *mut KcStore,
) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Failure::new(KC_INVALID_ARGUMENT, "n * dim overflows"))?;
        let vectors = slice(vectors, len, "vectors")?.to_vec();
        let labels = slice(labels, n, "labels")?.to_vec();
        let inner = build_store(RawEmbeddings::new(vectors, dim, labels, classes)?)?;
        *out = Box::into_raw(Box::new(KcStore { inner }));
        Ok(())
    })
}

/// Writes the store as `.femb`.
#[no_mangle]
pub unsafe extern "C" fn kc_store_save(store: *const KcStore, path: *const c_char) -> i32 {
    guard(|| {
        let store = non_null(store, "store")?;
        let path = path_arg(path, "path")?;
        knn_calibrate::save_store(&store.inner, &path)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn kc_store_free(store: *mut KcStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Row count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn kc_store_len(store: *const KcStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.len())
}

/// Vector dimension, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn kc_store_dim(store: *const KcStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.dim())
}

/// Class count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn kc_store_classes(store: *const KcStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.class_count())
}

/// kNN class distribution for a query. The query is L2-normalized first;
/// `probs_out` must hold exactly `kc_store_classes(store)` values.
#[no_mangle]
pub unsafe extern "C" fn kc_knn_predict(
    store: *const KcStore,
    query: *const f32,
    dim: usize,
    k: usize,
    tau: f64,
    metric: u32,
    probs_out: *mut f64,
    probs_len: usize,
) -> i32 {
    guard(|| {
        let store = non_null(store, "store")?;
        let query = slice(query, dim, "query")?;
        let out = slice_mut(probs_out, probs_len, "probs_out")?;
        let metric = metric_arg(metric)?;
        let unit = knn_calibrate::embedstore::normalize_vector(query)
            .ok_or_else(|| Failure::new(KC_DATA, "query has zero or non-finite norm"))?;
        let dist = knn_predict(&store.inner, &unit, k, tau, metric, None)?;
        write_probs(&dist, out)
    })
}

/// Modulating factor `f(p)`; `param` is γ for focal and α for nll.
#[no_mangle]
pub unsafe extern "C" fn kc_factor_value(kind: u32, param: f64, p: f64, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = factor_value(factor_arg(kind, param)?, p)?;
        Ok(())
    })
}

/// `(1 + f(p)) · ce`.
#[no_mangle]
pub unsafe extern "C" fn kc_calibrated_loss(ce: f64, p: f64, kind: u32, param: f64, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = calibrated_loss(ce, p, factor_arg(kind, param)?)?;
        Ok(())
    })
}

/// `λ · p_knn + (1 − λ) · p_model` over `len` classes.
#[no_mangle]
pub unsafe extern "C" fn kc_interpolate(
    p_knn: *const f64,
    p_model: *const f64,
    len: usize,
    lambda: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let a = probdist(slice(p_knn, len, "p_knn")?, "p_knn")?;
        let b = probdist(slice(p_model, len, "p_model")?, "p_model")?;
        let out = slice_mut(out, len, "out")?;
        let mix = pipeline::interpolate(&a, &b, lambda)?;
        write_probs(&mix, out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn kc_params_load(path: *const c_char, out: *mut *mut KcParams) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path, "path")?;
        let inner = knn_calibrate::ClassifierParams::load(&path)?;
        *out = Box::into_raw(Box::new(KcParams { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn kc_params_save(params: *const KcParams, path: *const c_char) -> i32 {
    guard(|| {
        let params = non_null(params, "params")?;
        let path = path_arg(path, "path")?;
        params.inner.save(&path)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn kc_params_free(params: *mut KcParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Trains a classifier. `config_json` is a JSON run configuration (missing
/// fields take defaults) or null for all defaults. When `log_out` is not
/// null it receives the training log as JSON lines, to be released with
/// [`kc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn kc_train(
    train: *const KcStore,
    dev: *const KcStore,
    config_json: *const c_char,
    out: *mut *mut KcParams,
    log_out: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let train = non_null(train, "train")?;
        let dev = non_null(dev, "dev")?;
        let config = config_arg(config_json)?;
        let trained = pipeline::train_calibrated(&config, &train.inner, &dev.inner)?;
        if let Some(slot) = log_out.as_mut() {
            let text = CString::new(trained.log.to_jsonl()).map_err(|e| Failure::new(KC_RUNTIME, e.to_string()))?;
            *slot = text.into_raw();
        }
        *out = Box::into_raw(Box::new(KcParams { inner: trained.params }));
        Ok(())
    })
}

/// Predicts one query under the configured mode; the query is
/// L2-normalized first. `store` is the kNN datastore and must match the
/// parameters' shape even in model-only mode. `probs_out` must hold exactly
/// one value per class.
#[no_mangle]
pub unsafe extern "C" fn kc_predict(
    params: *const KcParams,
    store: *const KcStore,
    config_json: *const c_char,
    query: *const f32,
    dim: usize,
    probs_out: *mut f64,
    probs_len: usize,
    class_out: *mut usize,
) -> i32 {
    guard(|| {
        let params = non_null(params, "params")?;
        let config = config_arg(config_json)?;
        let query = slice(query, dim, "query")?;
        let out = slice_mut(probs_out, probs_len, "probs_out")?;
        let class_out = out_ptr(class_out, "class_out")?;
        let store = non_null(store, "store")?;
        let (dist, class) = pipeline::predict(&config, &params.inner, &store.inner, query)?;
        write_probs(&dist, out)?;
        *class_out = class;
        Ok(())
    })
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn kc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
