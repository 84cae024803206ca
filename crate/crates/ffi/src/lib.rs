//! C interface over datasets, trained models and cross-view association.
//!
//! Every function returns an [`MvStatus`]. On failure the message is kept
//! per thread and can be read with [`mvassoc_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mvassoc::association::{associate, AssociationParams};
use mvassoc::config::RunConfig;
use mvassoc::dataset::Dataset;
use mvassoc::error::{Error, ErrorCategory};
use mvassoc::inference::associate_dataset;
use mvassoc::metrics::evaluate_report;
use mvassoc::model::Checkpoint;
use mvassoc::pretext::train;
use mvassoc::sim::generate_scene;

/// Result code of every call. Nonzero codes other than `NULL_POINTER` and
/// `PANIC` equal the command-line exit codes of the same error category.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Config = 3,
    Data = 4,
    Runtime = 5,
    Io = 6,
    Panic = 7,
}

/// A multi-view detections dataset.
pub struct MvDataset(Dataset);

/// A trained encoder and decoders with their provenance.
pub struct MvModel(Checkpoint);

/// One cross-view match: detection `row` of view i with `col` of view j.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvMatch {
    pub row: usize,
    pub col: usize,
    pub confidence: f64,
}

/// Pooled association quality. An `has_*` flag of 0 means the value is
/// undefined (no decisions of that kind) and the number is NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub ipaa100: f64,
    pub has_precision: u8,
    pub has_recall: u8,
    pub has_accuracy: u8,
    pub has_ipaa100: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MvStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            MvStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            match e.category() {
                ErrorCategory::Usage => MvStatus::Usage,
                ErrorCategory::Config => MvStatus::Config,
                ErrorCategory::Data => MvStatus::Data,
                ErrorCategory::Runtime => MvStatus::Runtime,
                ErrorCategory::Io => MvStatus::Io,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            MvStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Config(format!("`{what}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn optional_config(p: *const c_char) -> Result<RunConfig, Failure> {
    let cfg = if p.is_null() {
        RunConfig::default()
    } else {
        RunConfig::read(path(p, "config")?)?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn put<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers check `out` for null before building `value`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mvassoc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Simulates a scene from the `[scene]` table of the TOML file at
/// `config` (defaults when null).
///
/// # Safety
/// `config` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_dataset_generate(
    config: *const c_char,
    seed: u64,
    out: *mut *mut MvDataset,
) -> MvStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let cfg = optional_config(config)?;
        put(out, MvDataset(generate_scene(&cfg.scene, seed)?.dataset));
        Ok(())
    })
}

/// # Safety
/// `file` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_dataset_read(file: *const c_char, out: *mut *mut MvDataset) -> MvStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, MvDataset(Dataset::read(path(file, "file")?)?));
        Ok(())
    })
}

/// # Safety
/// `dataset` comes from this library; `file` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_dataset_write(dataset: *const MvDataset, file: *const c_char) -> MvStatus {
    guard(|| {
        deref(dataset, "dataset")?.0.write(path(file, "file")?)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` comes from this library; the outputs are writable or null.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_dataset_shape(
    dataset: *const MvDataset,
    frames: *mut usize,
    cameras: *mut usize,
) -> MvStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        if let Some(f) = frames.as_mut() {
            *f = ds.len();
        }
        if let Some(c) = cameras.as_mut() {
            *c = ds.cameras();
        }
        Ok(())
    })
}

/// Number of detections in one view of one frame.
///
/// # Safety
/// `dataset` comes from this library; `count` is writable.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_dataset_view_len(
    dataset: *const MvDataset,
    frame: usize,
    camera: usize,
    count: *mut usize,
) -> MvStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        let count = count.as_mut().ok_or(Failure::Null("count"))?;
        if frame >= ds.len() || camera >= ds.cameras() {
            return Err(Error::Index {
                what: "dataset view",
                index: if frame >= ds.len() { frame } else { camera },
                len: if frame >= ds.len() { ds.len() } else { ds.cameras() },
            }
            .into());
        }
        *count = ds.view(frame, camera).len();
        Ok(())
    })
}

/// # Safety
/// `dataset` is null or comes from this library and is not used again.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_dataset_free(dataset: *mut MvDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a model on `dataset` with the `[train]` table of the TOML file at
/// `config` (defaults when null) and the given seed. A run that diverges
/// returns `RUNTIME` and still stores the last finite model in `out`.
///
/// # Safety
/// `dataset` comes from this library; `config` is null or a NUL-terminated
/// string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_train(
    dataset: *const MvDataset,
    config: *const c_char,
    seed: u64,
    out: *mut *mut MvModel,
) -> MvStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let mut cfg = optional_config(config)?.train;
        cfg.seed = seed;
        let outcome = train(ds, &cfg)?;
        put(out, MvModel(outcome.checkpoint));
        match outcome.divergence {
            Some(why) => Err(Error::Runtime(why).into()),
            None => Ok(()),
        }
    })
}

/// # Safety
/// `file` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_model_read(file: *const c_char, out: *mut *mut MvModel) -> MvStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, MvModel(Checkpoint::read(path(file, "file")?)?));
        Ok(())
    })
}

/// # Safety
/// `model` comes from this library; `file` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_model_write(model: *const MvModel, file: *const c_char) -> MvStatus {
    guard(|| {
        deref(model, "model")?.0.write(path(file, "file")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` is null or comes from this library and is not used again.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_model_free(model: *mut MvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Associates views `view_i` and `view_j` of one frame, writing at most
/// `capacity` matches to `matches` and the full match count to `count`.
/// Call with `capacity` 0 to size the buffer first.
///
/// # Safety
/// Handles come from this library; `matches` holds `capacity` elements or
/// is null when `capacity` is 0; `count` is writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mvassoc_associate_frame(
    model: *const MvModel,
    dataset: *const MvDataset,
    frame: usize,
    view_i: usize,
    view_j: usize,
    threshold: f64,
    matches: *mut MvMatch,
    capacity: usize,
    count: *mut usize,
) -> MvStatus {
    guard(|| {
        let model = &deref(model, "model")?.0.model;
        let ds = &deref(dataset, "dataset")?.0;
        let count = count.as_mut().ok_or(Failure::Null("count"))?;
        if capacity > 0 && matches.is_null() {
            return Err(Failure::Null("matches"));
        }
        if ds.cameras() != model.cameras() {
            return Err(Error::Config(format!(
                "model expects {} cameras but the dataset has {}",
                model.cameras(),
                ds.cameras()
            ))
            .into());
        }
        let frame = ds.frames.get(frame).ok_or(Error::Index {
            what: "frame",
            index: frame,
            len: ds.len(),
        })?;
        for v in [view_i, view_j] {
            if v >= ds.cameras() {
                return Err(Error::Index {
                    what: "view",
                    index: v,
                    len: ds.cameras(),
                }
                .into());
            }
        }
        let params = AssociationParams {
            threshold,
            ..AssociationParams::default()
        };
        let feats = model.frame_features(frame, true)?;
        let result = associate(&feats[view_i], &feats[view_j], &params)?;
        *count = result.matches.len();
        for (k, m) in result.matches.iter().take(capacity).enumerate() {
            *matches.add(k) = MvMatch {
                row: m.row,
                col: m.col,
                confidence: m.confidence,
            };
        }
        Ok(())
    })
}

/// Associates every view pair of every frame and scores the result against
/// the dataset's identities.
///
/// # Safety
/// Handles come from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mvassoc_evaluate(
    model: *const MvModel,
    dataset: *const MvDataset,
    threshold: f64,
    out: *mut MvMetrics,
) -> MvStatus {
    guard(|| {
        let model = &deref(model, "model")?.0.model;
        let ds = &deref(dataset, "dataset")?.0;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let params = AssociationParams {
            threshold,
            ..AssociationParams::default()
        };
        let report = associate_dataset(model, ds, 0..ds.len(), &params, true)?;
        let e = evaluate_report(&report, ds)?;
        let ipaa = e.ipaa(100.0)?;
        let split = |v: Option<f64>| (v.unwrap_or(f64::NAN), u8::from(v.is_some()));
        let (precision, has_precision) = split(e.precision);
        let (recall, has_recall) = split(e.recall);
        let (accuracy, has_accuracy) = split(e.accuracy);
        let (ipaa100, has_ipaa100) = split(ipaa);
        *out = MvMetrics {
            precision,
            recall,
            accuracy,
            ipaa100,
            has_precision,
            has_recall,
            has_accuracy,
            has_ipaa100,
        };
        Ok(())
    })
}
