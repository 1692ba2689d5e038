//! C ABI over the `urf` library.
//!
//! Matrices are passed row-major as `n_samples * n_features` doubles.
//! Every function returns a `UrfStatus`; on failure the message is
//! available from `urf_last_error_message` on the same thread. Handles are
//! opaque and must be released with their `*_free` function. Strings
//! returned by the library must be released with `urf_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use urf::affinity::{count_matrix, normalize, to_distance, DistanceMatrix};
use urf::cluster::{cut, ward_linkage};
use urf::data::OmicsMatrix;
use urf::federated::{export_model, GlobalModel};
use urf::forest::{train_forest, Forest, ForestConfig};
use urf::metrics::adjusted_rand_index;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    Panic = 4,
}

/// A trained single-layer forest.
pub struct UrfForest {
    inner: Forest,
}

/// A bundle or concatenated global model read from JSON.
pub struct UrfModel {
    inner: GlobalModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(UrfStatus, String);

impl From<urf::Error> for Fail {
    fn from(e: urf::Error) -> Self {
        Fail(UrfStatus::DataError, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UrfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UrfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UrfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(UrfStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(UrfStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `ptr` must be valid for `len` reads when non-null.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be valid for `len` writes when non-null.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn matrix(
    values: *const f64,
    n_samples: usize,
    n_features: usize,
) -> Result<OmicsMatrix, Fail> {
    let len = n_samples
        .checked_mul(n_features)
        .ok_or_else(|| invalid("matrix size overflows"))?;
    let data = slice(values, len, "values")?;
    let rows: Vec<Vec<f64>> = data
        .chunks(n_features.max(1))
        .map(<[f64]>::to_vec)
        .collect();
    if rows.is_empty() {
        return Err(invalid("matrix is empty"));
    }
    Ok(OmicsMatrix::from_rows(&rows)?)
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next library call on the same thread.
#[no_mangle]
pub extern "C" fn urf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Trains a forest on a row-major matrix without missing values.
///
/// # Safety
/// `values` must hold `n_samples * n_features` doubles; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urf_forest_train(
    values: *const f64,
    n_samples: usize,
    n_features: usize,
    n_trees: usize,
    mtry: usize,
    min_leaf: usize,
    bootstrap: bool,
    seed: u64,
    out: *mut *mut UrfForest,
) -> UrfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = matrix(values, n_samples, n_features)?;
        let cfg = ForestConfig {
            n_trees,
            mtry,
            min_leaf,
            bootstrap,
            seed,
        };
        let forest = train_forest(&m, &cfg)?;
        *out = Box::into_raw(Box::new(UrfForest { inner: forest }));
        Ok(())
    })
}

/// # Safety
/// `forest` must come from `urf_forest_train` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn urf_forest_free(forest: *mut UrfForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}

/// # Safety
/// `forest` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn urf_forest_n_trees(
    forest: *const UrfForest,
    out: *mut usize,
) -> UrfStatus {
    guard(|| {
        let f = forest.as_ref().ok_or_else(|| null("forest"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = f.inner.n_trees();
        Ok(())
    })
}

/// Writes the `n_samples * n_samples` affinity of `values` under `forest`.
///
/// # Safety
/// `values` must hold `n_samples * n_features` doubles and `out` room for
/// `n_samples * n_samples`.
#[no_mangle]
pub unsafe extern "C" fn urf_forest_affinity(
    forest: *const UrfForest,
    values: *const f64,
    n_samples: usize,
    n_features: usize,
    out: *mut f64,
) -> UrfStatus {
    guard(|| {
        let f = forest.as_ref().ok_or_else(|| null("forest"))?;
        let m = matrix(values, n_samples, n_features)?;
        let a = normalize(&count_matrix(&f.inner, &m)?)?;
        slice_mut(out, n_samples * n_samples, "out")?.copy_from_slice(a.values());
        Ok(())
    })
}

/// Ward clustering of a symmetric distance matrix cut into `k` clusters.
///
/// # Safety
/// `distance` must hold `n * n` doubles and `labels_out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn urf_ward_cut(
    distance: *const f64,
    n: usize,
    k: usize,
    labels_out: *mut usize,
) -> UrfStatus {
    guard(|| {
        let len = n
            .checked_mul(n)
            .ok_or_else(|| invalid("matrix size overflows"))?;
        let d = slice(distance, len, "distance")?;
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        let dm = DistanceMatrix::new(d.to_vec(), ids)?;
        let a = cut(&ward_linkage(&dm)?, k)?;
        slice_mut(labels_out, n, "labels_out")?.copy_from_slice(a.labels());
        Ok(())
    })
}

/// Affinity-based Ward labels: trains nothing, only routes `values`.
///
/// # Safety
/// As for `urf_forest_affinity`, with `labels_out` room for `n_samples`.
#[no_mangle]
pub unsafe extern "C" fn urf_forest_cluster(
    forest: *const UrfForest,
    values: *const f64,
    n_samples: usize,
    n_features: usize,
    k: usize,
    labels_out: *mut usize,
) -> UrfStatus {
    guard(|| {
        let f = forest.as_ref().ok_or_else(|| null("forest"))?;
        let m = matrix(values, n_samples, n_features)?;
        let d = to_distance(&normalize(&count_matrix(&f.inner, &m)?)?);
        let a = cut(&ward_linkage(&d)?, k)?;
        slice_mut(labels_out, n_samples, "labels_out")?.copy_from_slice(a.labels());
        Ok(())
    })
}

/// Serializes the forest as a one-layer model bundle.
///
/// # Safety
/// `client_id` must be a NUL-terminated string; `json_out` a valid pointer.
/// Release the result with `urf_string_free`.
#[no_mangle]
pub unsafe extern "C" fn urf_forest_export_json(
    forest: *const UrfForest,
    client_id: *const c_char,
    json_out: *mut *mut c_char,
) -> UrfStatus {
    guard(|| {
        let f = forest.as_ref().ok_or_else(|| null("forest"))?;
        let id = c_str(client_id, "client_id")?;
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let text = export_model(std::slice::from_ref(&f.inner), id)?.to_json()?;
        *json_out = CString::new(text)
            .map_err(|e| invalid(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn urf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a bundle or global model.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urf_model_from_json(
    json: *const c_char,
    out: *mut *mut UrfModel,
) -> UrfStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let g = GlobalModel::from_json(text)?;
        *out = Box::into_raw(Box::new(UrfModel { inner: g }));
        Ok(())
    })
}

/// Concatenates two models (clients of `a` first).
///
/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn urf_model_merge(
    a: *const UrfModel,
    b: *const UrfModel,
    out: *mut *mut UrfModel,
) -> UrfStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("a"))?;
        let b = b.as_ref().ok_or_else(|| null("b"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let bundles = a
            .inner
            .bundles()
            .iter()
            .chain(b.inner.bundles())
            .cloned()
            .collect();
        let g = urf::federated::merge_models(bundles)?;
        *out = Box::into_raw(Box::new(UrfModel { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn urf_model_free(model: *mut UrfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn urf_model_total_trees(
    model: *const UrfModel,
    out: *mut usize,
) -> UrfStatus {
    guard(|| {
        let g = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = g.inner.total_trees();
        Ok(())
    })
}

/// Affinity of local samples under every layer-0 tree of the model.
///
/// # Safety
/// As for `urf_forest_affinity`.
#[no_mangle]
pub unsafe extern "C" fn urf_model_affinity(
    model: *const UrfModel,
    values: *const f64,
    n_samples: usize,
    n_features: usize,
    out: *mut f64,
) -> UrfStatus {
    guard(|| {
        let g = model.as_ref().ok_or_else(|| null("model"))?;
        if g.inner.n_layers() != 1 {
            return Err(invalid("model has more than one layer"));
        }
        let m = matrix(values, n_samples, n_features)?;
        let d = urf::data::MultiOmicsDataset::single(m);
        let a = urf::federated::global_affinity(&g.inner, &d)?;
        slice_mut(out, n_samples * n_samples, "out")?.copy_from_slice(a.values());
        Ok(())
    })
}

/// Adjusted Rand index of two label vectors of length `n`.
///
/// # Safety
/// `a` and `b` must hold `n` labels; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urf_ari(
    a: *const usize,
    b: *const usize,
    n: usize,
    out: *mut f64,
) -> UrfStatus {
    guard(|| {
        let a = slice(a, n, "a")?;
        let b = slice(b, n, "b")?;
        *out.as_mut().ok_or_else(|| null("out"))? = adjusted_rand_index(a, b)?;
        Ok(())
    })
}
