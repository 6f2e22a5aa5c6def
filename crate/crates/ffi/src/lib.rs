//! C ABI for the recommender.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a [`CragStatus`];
//! on failure a message is available from [`crag_last_error`] on the same
//! thread until the next failing call. Strings returned through `out`
//! parameters are UTF-8, NUL-terminated and released with [`crag_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use crag::app::{AppConfig, Engine};
use crag::cf_model::{fit_ease_catalog, retrieve, score, QueryVector, SimilarityModel};
use crag::corpus::{InteractionMatrix, ItemId};
use crag::pipeline::run;
use crag::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CragStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Backend = 6,
    Pipeline = 7,
    Model = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A loaded corpus, similarity model and LLM backend.
pub struct CragEngine {
    engine: Engine,
}

/// A fitted item-item similarity model over a dense interaction matrix.
pub struct CragSimilarity {
    model: SimilarityModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    let c = CString::new(message).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CragStatus, message: impl Into<String>) -> CragStatus {
    set_error(message);
    status
}

fn status_of(e: &Error) -> CragStatus {
    match e {
        Error::Config(_) => CragStatus::Config,
        Error::Io { .. } | Error::Corpus(_) => CragStatus::Io,
        Error::Gateway(_) => CragStatus::Backend,
        Error::Pipeline(p) if p.gateway().is_some() => CragStatus::Backend,
        Error::Link(crag::entity_link::LinkError::Gateway(_)) => CragStatus::Backend,
        Error::Link(_) | Error::Pipeline(_) | Error::Eval(_) => CragStatus::Pipeline,
        Error::Cf(_) => CragStatus::Model,
    }
}

fn from_error(e: Error) -> CragStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, turning a panic into [`CragStatus::Panic`].
fn guard(f: impl FnOnce() -> CragStatus) -> CragStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(CragStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, CragStatus> {
    if p.is_null() {
        return Err(fail(CragStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CragStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn read_items<'a>(items: *const u32, n: usize) -> Result<&'a [u32], CragStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if items.is_null() {
        return Err(fail(CragStatus::NullArgument, "items is null"));
    }
    Ok(std::slice::from_raw_parts(items, n))
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Opens an engine from a TOML configuration file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crag_engine_open(config_path: *const c_char, out: *mut *mut CragEngine) -> CragStatus {
    guard(|| {
        if out.is_null() {
            return fail(CragStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match read_str(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let engine = match AppConfig::load(Path::new(path)).and_then(Engine::open) {
            Ok(e) => e,
            Err(e) => return from_error(e),
        };
        *out = Box::into_raw(Box::new(CragEngine { engine }));
        CragStatus::Ok
    })
}

/// Releases an engine. NULL is ignored.
///
/// # Safety
/// `engine` must come from [`crag_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crag_engine_free(engine: *mut CragEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Links `utterance`, runs the configured pipeline and writes a JSON object
/// `{"recommendations": [titles...], "trace": {...}}` to `out_json`.
/// A negative `k` keeps the configured retrieval size.
///
/// # Safety
/// `engine` must be a live handle, `utterance` a NUL-terminated string and
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crag_engine_recommend(
    engine: *const CragEngine,
    utterance: *const c_char,
    k: i32,
    out_json: *mut *mut c_char,
) -> CragStatus {
    guard(|| {
        if engine.is_null() || out_json.is_null() {
            return fail(CragStatus::NullArgument, "engine or out_json is null");
        }
        *out_json = ptr::null_mut();
        let text = match read_str(utterance, "utterance") {
            Ok(t) => t,
            Err(s) => return s,
        };
        if text.trim().is_empty() {
            return fail(CragStatus::InvalidArgument, "utterance is empty");
        }
        let engine = &(*engine).engine;
        let mut cfg = engine.config.pipeline.clone();
        if k >= 0 {
            cfg.k = k as usize;
        }
        let result = engine
            .single_turn(text)
            .and_then(|(dialogue, _)| run(&dialogue, &cfg, &engine.inputs()).map_err(Error::from));
        let trace = match result {
            Ok(t) => t,
            Err(e) => return from_error(e),
        };
        let titles: Vec<&str> = trace.final_recs.iter().map(|&c| engine.db.catalog_title(c)).collect();
        let body = serde_json::json!({ "recommendations": titles, "trace": trace }).to_string();
        *out_json = CString::new(body).expect("JSON has no NUL").into_raw();
        CragStatus::Ok
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fits a similarity model on a row-major 0/1 matrix of `n_users` by
/// `n_items` bytes. Every item is recommendable.
///
/// # Safety
/// `data` must point to `n_users * n_items` readable bytes and `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crag_similarity_fit_dense(
    data: *const u8,
    n_users: usize,
    n_items: usize,
    lambda: f64,
    out: *mut *mut CragSimilarity,
) -> CragStatus {
    guard(|| {
        if out.is_null() {
            return fail(CragStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let Some(len) = n_users.checked_mul(n_items) else {
            return fail(CragStatus::InvalidArgument, "matrix size overflows");
        };
        if data.is_null() && len > 0 {
            return fail(CragStatus::NullArgument, "data is null");
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let r = match InteractionMatrix::from_dense(n_users, n_items, bytes) {
            Ok(r) => r,
            Err(e) => return fail(CragStatus::InvalidArgument, e.to_string()),
        };
        let reid: Vec<ItemId> = (0..n_items as u32).map(ItemId).collect();
        match fit_ease_catalog(&r, &reid, lambda) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(CragSimilarity { model }));
                CragStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// Number of items (rows and columns) of the model, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn crag_similarity_n_items(model: *const CragSimilarity) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).model.n_items()
    }
}

/// Writes the score of every item for the query made of `items` into
/// `out_scores`, which must hold `crag_similarity_n_items` values.
///
/// # Safety
/// `items` must point to `n_items_in` ids and `out_scores` to `out_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn crag_similarity_score(
    model: *const CragSimilarity,
    items: *const u32,
    n_items_in: usize,
    out_scores: *mut f64,
    out_len: usize,
) -> CragStatus {
    guard(|| {
        if model.is_null() || out_scores.is_null() {
            return fail(CragStatus::NullArgument, "model or out_scores is null");
        }
        let model = &(*model).model;
        if out_len < model.n_catalog() {
            return fail(
                CragStatus::BufferTooSmall,
                format!("out_len {out_len} < {} items", model.n_catalog()),
            );
        }
        let q = match read_items(items, n_items_in).and_then(|ids| query(model, ids)) {
            Ok(q) => q,
            Err(s) => return s,
        };
        match score(model, &q) {
            Ok(s) => {
                std::slice::from_raw_parts_mut(out_scores, s.len()).copy_from_slice(&s);
                CragStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// Writes up to `k` best items (excluding the query items) with their scores,
/// best first, ties broken by lower id. `*out_count` receives the number written.
///
/// # Safety
/// `items` must point to `n_items_in` ids; `out_ids` and `out_scores` must
/// each hold `k` values; `out_count` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crag_similarity_top_k(
    model: *const CragSimilarity,
    items: *const u32,
    n_items_in: usize,
    k: usize,
    out_ids: *mut u32,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> CragStatus {
    guard(|| {
        if model.is_null() || out_count.is_null() || (k > 0 && (out_ids.is_null() || out_scores.is_null())) {
            return fail(CragStatus::NullArgument, "null model or output buffer");
        }
        *out_count = 0;
        let model = &(*model).model;
        let q = match read_items(items, n_items_in).and_then(|ids| query(model, ids)) {
            Ok(q) => q,
            Err(s) => return s,
        };
        let list = match retrieve(model, &q, k, false) {
            Ok(l) => l,
            Err(e) => return from_error(e.into()),
        };
        for (i, e) in list.entries.iter().enumerate() {
            *out_ids.add(i) = e.catalog_id.0;
            *out_scores.add(i) = e.score;
        }
        *out_count = list.len();
        CragStatus::Ok
    })
}

fn query(model: &SimilarityModel, ids: &[u32]) -> Result<QueryVector, CragStatus> {
    QueryVector::new(model.n_items(), ids.iter().map(|&i| ItemId(i)))
        .map_err(|e| fail(CragStatus::InvalidArgument, e.to_string()))
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from [`crag_similarity_fit_dense`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crag_similarity_free(model: *mut CragSimilarity) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
