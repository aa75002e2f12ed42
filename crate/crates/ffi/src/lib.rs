//! C ABI over `embsizer`.
//!
//! Every fallible call returns an [`EsStatus`]; on failure the message is
//! available from [`es_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Configuration is passed
//! as run-config JSON (NULL selects the defaults).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use embsizer::config::RunConfig;
use embsizer::data::{generate_synthetic, DatasetSplit, SyntheticSpec};
use embsizer::retrain::{retrain, SizeAssignment};
use embsizer::rng::RngStream;
use embsizer::sampling::Sampler;
use embsizer::search::run_search;
use embsizer::supernet::{load_net, param_reduction, save_net, train_supernet, EmbeddingNet};
use embsizer::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    Config = 1,
    Data = 2,
    NonFinite = 3,
    DegenerateBatch = 4,
    UndefinedMetric = 5,
    Checkpoint = 6,
    SchemaMismatch = 7,
    Io = 8,
    Json = 9,
    Csv = 10,
    NullPointer = 11,
    InvalidUtf8 = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

impl From<&Error> for EsStatus {
    fn from(e: &Error) -> Self {
        match e.kind() {
            "config" => EsStatus::Config,
            "data" => EsStatus::Data,
            "non_finite" => EsStatus::NonFinite,
            "degenerate_batch" => EsStatus::DegenerateBatch,
            "undefined_metric" => EsStatus::UndefinedMetric,
            "checkpoint" => EsStatus::Checkpoint,
            "schema_mismatch" => EsStatus::SchemaMismatch,
            "io" => EsStatus::Io,
            "json" => EsStatus::Json,
            _ => EsStatus::Csv,
        }
    }
}

/// A loaded or generated dataset split.
pub struct EsDataset(DatasetSplit);

/// A supernet or a fixed-size model.
pub struct EsNet(EmbeddingNet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(EsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(EsStatus::from(&e), e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EsStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(EsStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(EsStatus::InvalidUtf8, "argument is not UTF-8".into()))
}

unsafe fn config_arg(p: *const c_char) -> Result<RunConfig, Fail> {
    if p.is_null() {
        return Ok(RunConfig::default());
    }
    Ok(RunConfig::from_json(str_arg(p)?)?.resolve()?)
}

unsafe fn ref_arg<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn es_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Generates a synthetic dataset from a synthetic-spec JSON object.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_dataset_synthetic(spec_json: *const c_char, out: *mut *mut EsDataset) -> EsStatus {
    guard(|| {
        let spec: SyntheticSpec = serde_json::from_str(str_arg(spec_json)?).map_err(Error::from)?;
        let data = generate_synthetic(&spec)?;
        write_out(out, Box::into_raw(Box::new(EsDataset(data))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_dataset_load(path: *const c_char, out: *mut *mut EsDataset) -> EsStatus {
    guard(|| {
        let data = DatasetSplit::load(PathBuf::from(str_arg(path)?))?;
        write_out(out, Box::into_raw(Box::new(EsDataset(data))))
    })
}

/// # Safety
/// `data` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn es_dataset_save(data: *const EsDataset, path: *const c_char) -> EsStatus {
    guard(|| Ok(ref_arg(data)?.0.save(PathBuf::from(str_arg(path)?))?))
}

/// Number of fields, or 0 for a NULL handle.
///
/// # Safety
/// `data` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn es_dataset_num_fields(data: *const EsDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.num_fields())
}

/// Copies the field cardinalities into `out` (capacity `len`).
///
/// # Safety
/// `data` must come from this library; `out` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn es_dataset_cardinalities(data: *const EsDataset, out: *mut usize, len: usize) -> EsStatus {
    guard(|| {
        let cards = ref_arg(data)?.0.cardinalities();
        if len < cards.len() {
            return Err(Fail(EsStatus::BufferTooSmall, format!("need {} slots", cards.len())));
        }
        if out.is_null() {
            return Err(null());
        }
        std::ptr::copy_nonoverlapping(cards.as_ptr(), out, cards.len());
        Ok(())
    })
}

/// # Safety
/// `data` must be NULL or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn es_dataset_free(data: *mut EsDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Builds and trains a supernet using the config's model, candidates,
/// scheme, sampler, supernet training budget and seed.
///
/// # Safety
/// `data` must come from this library; `config_json` NULL or a NUL-terminated
/// string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_supernet_train(data: *const EsDataset, config_json: *const c_char, out: *mut *mut EsNet) -> EsStatus {
    guard(|| {
        let data = &ref_arg(data)?.0;
        let cfg = config_arg(config_json)?;
        let rng = RngStream::new(cfg.seed);
        let mut net = EmbeddingNet::supernet(&data.schemas, &cfg.candidates, cfg.scheme, &cfg.model, &rng)?;
        let mut sampler = Sampler::new(&cfg.sampler, &data.cardinalities(), cfg.candidates.sizes())?;
        train_supernet(&mut net, data, &mut sampler, &cfg.supernet_train, &rng)?;
        write_out(out, Box::into_raw(Box::new(EsNet(net))))
    })
}

/// Loads a checkpoint, refusing one written for a different schema.
///
/// # Safety
/// `path` must be a NUL-terminated string; `data` from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_net_load(path: *const c_char, data: *const EsDataset, out: *mut *mut EsNet) -> EsStatus {
    guard(|| {
        let (net, _) = load_net(PathBuf::from(str_arg(path)?), &ref_arg(data)?.0.schemas)?;
        write_out(out, Box::into_raw(Box::new(EsNet(net))))
    })
}

/// # Safety
/// Handles must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn es_net_save(net: *const EsNet, data: *const EsDataset, path: *const c_char) -> EsStatus {
    guard(|| Ok(save_net(&ref_arg(net)?.0, &ref_arg(data)?.0.schemas, &[], PathBuf::from(str_arg(path)?))?))
}

/// Deterministic parameter digest, or 0 for a NULL handle.
///
/// # Safety
/// `net` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn es_net_checksum(net: *const EsNet) -> u64 {
    net.as_ref().map_or(0, |n| n.0.checksum())
}

/// # Safety
/// `net` must be NULL or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn es_net_free(net: *mut EsNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Searches a frozen supernet and writes one embedding size per field into
/// `out_sizes` (capacity `len`).
///
/// # Safety
/// Handles must come from this library; `config_json` NULL or a NUL-terminated
/// string; `out_sizes` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn es_search(
    net: *const EsNet,
    data: *const EsDataset,
    config_json: *const c_char,
    out_sizes: *mut usize,
    len: usize,
) -> EsStatus {
    guard(|| {
        let (net, data) = (&ref_arg(net)?.0, &ref_arg(data)?.0);
        let cfg = config_arg(config_json)?;
        if len < net.num_fields() {
            return Err(Fail(EsStatus::BufferTooSmall, format!("need {} slots", net.num_fields())));
        }
        if out_sizes.is_null() {
            return Err(null());
        }
        let outcome = run_search(net, data, &cfg.search, &RngStream::new(cfg.seed))?;
        std::ptr::copy_nonoverlapping(outcome.sizes.as_ptr(), out_sizes, outcome.sizes.len());
        Ok(())
    })
}

/// Retrains a fresh model at `sizes` and reports its test AUC and parameter
/// reduction against 32-wide embeddings. Either output may be NULL.
///
/// # Safety
/// `data` must come from this library; `sizes` must hold `len` elements;
/// outputs NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn es_retrain(
    data: *const EsDataset,
    sizes: *const usize,
    len: usize,
    config_json: *const c_char,
    out_auc: *mut f64,
    out_param_reduction: *mut f64,
) -> EsStatus {
    guard(|| {
        let data = &ref_arg(data)?.0;
        let cfg = config_arg(config_json)?;
        let a = SizeAssignment::new(&data.schemas, slice_arg(sizes, len)?.to_vec())?;
        let outcome = retrain(data, &cfg.candidates, &a, &cfg.model, &cfg.retrain, cfg.seed, None)?;
        if !out_auc.is_null() {
            out_auc.write(outcome.report.auc);
        }
        if !out_param_reduction.is_null() {
            out_param_reduction.write(outcome.report.p_r);
        }
        Ok(())
    })
}

/// Parameter reduction of `sizes` against 32-wide embeddings.
///
/// # Safety
/// `cardinalities` and `sizes` must each hold `len` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_param_reduction(
    cardinalities: *const usize,
    sizes: *const usize,
    len: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let pr = param_reduction(slice_arg(cardinalities, len)?, slice_arg(sizes, len)?)?;
        write_out(out, pr)
    })
}
