//! C ABI over the `tem4ctr` core.
//!
//! Every fallible function returns a [`Tem4ctrStatus`]; on failure a
//! description is available from [`tem4ctr_last_error_message`] on the same
//! thread. Models and datasets are opaque handles that must be released
//! with their `_free` function. Structured inputs (configs, samples) are
//! passed as UTF-8 JSON strings in the same schema the CLI reads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tem4ctr::diffcore::CheckpointFormat;
use tem4ctr::feedlog::{parse_events, ItemRecord, TrainingSample};
use tem4ctr::harness::{self, Dataset, ExperimentConfig};
use tem4ctr::model::Tem4Ctr;
use tem4ctr::stm::{search_context, SearchOptions};
use tem4ctr::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tem4ctrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Schema = 4,
    Shape = 5,
    Vocabulary = 6,
    Integrity = 7,
    Config = 8,
    UndefinedMetric = 9,
    Checkpoint = 10,
    Io = 11,
    Panic = 12,
}

/// A trained or freshly initialised model.
pub struct Tem4ctrModel {
    inner: Tem4Ctr,
}

/// Preprocessed train/test samples.
pub struct Tem4ctrDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> Tem4ctrStatus {
    match err {
        Error::Parse { .. } | Error::Json(_) => Tem4ctrStatus::Parse,
        Error::Schema(_) => Tem4ctrStatus::Schema,
        Error::Shape(_) => Tem4ctrStatus::Shape,
        Error::Vocabulary { .. } => Tem4ctrStatus::Vocabulary,
        Error::Integrity(_) => Tem4ctrStatus::Integrity,
        Error::Config(_) => Tem4ctrStatus::Config,
        Error::UndefinedMetric(_) => Tem4ctrStatus::UndefinedMetric,
        Error::Checkpoint(_) => Tem4ctrStatus::Checkpoint,
        Error::Io(_) => Tem4ctrStatus::Io,
    }
}

/// Internal failure carrying the status to report.
struct Fail(Tem4ctrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(Tem4ctrStatus::Parse, e.to_string())
    }
}

/// Run `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> Tem4ctrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Tem4ctrStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {message}"));
            Tem4ctrStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(Tem4ctrStatus::NullPointer, format!("{what} is null"))
}

/// Borrow a required C string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(Tem4ctrStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Parse an optional experiment config; null means all defaults.
unsafe fn config(p: *const c_char) -> Result<ExperimentConfig, Fail> {
    if p.is_null() {
        return Ok(ExperimentConfig::default());
    }
    Ok(ExperimentConfig::from_json(text(p, "config_json")?)?)
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message describing the last failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn tem4ctr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tem4ctr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a model with seeded initial weights.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is a valid
/// pointer that receives the handle.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_model_new(
    config_json: *const c_char,
    num_items: usize,
    num_categories: usize,
    out: *mut *mut Tem4ctrModel,
) -> Tem4ctrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = config(config_json)?;
        let inner = Tem4Ctr::new(cfg.model_config(num_items, num_categories, None), cfg.seed)?;
        *out = Box::into_raw(Box::new(Tem4ctrModel { inner }));
        Ok(())
    })
}

/// Load a model from a binary or JSON checkpoint. The architecture comes
/// from `config_json`; vocabulary sizes are read from the checkpoint.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string, `path` is a
/// NUL-terminated string, and `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_model_load(
    config_json: *const c_char,
    path: *const c_char,
    out: *mut *mut Tem4ctrModel,
) -> Tem4ctrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = config(config_json)?;
        let path = text(path, "path")?;
        let inner = Tem4Ctr::load(cfg.model_config(1, 1, None), Path::new(path))?;
        *out = Box::into_raw(Box::new(Tem4ctrModel { inner }));
        Ok(())
    })
}

/// Save a model's parameters; `json` selects the JSON format over binary.
///
/// # Safety
/// `model` is a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_model_save(model: *const Tem4ctrModel, path: *const c_char, json: bool) -> Tem4ctrStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let path = text(path, "path")?;
        let format = if json {
            CheckpointFormat::Json
        } else {
            CheckpointFormat::Binary
        };
        Ok(model.inner.save(Path::new(path), format)?)
    })
}

/// Number of trainable scalars in the model.
///
/// # Safety
/// `model` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_model_num_params(model: *const Tem4ctrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.params.num_scalars())
}

/// Click probability of one sample, given as a JSON object with `user`,
/// `history`, `contexts`, optional `exposure_pool`, `target` and `label`.
///
/// # Safety
/// `model` is a live handle, `sample_json` a NUL-terminated string and
/// `out_p` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_model_predict(
    model: *const Tem4ctrModel,
    sample_json: *const c_char,
    out_p: *mut f64,
) -> Tem4ctrStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out_p = out_ref(out_p, "out_p")?;
        let sample: TrainingSample = serde_json::from_str(text(sample_json, "sample_json")?)?;
        *out_p = model.inner.predict(&sample)?;
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_model_free(model: *mut Tem4ctrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Read a JSON-lines event log, split it by time and attach contexts.
///
/// # Safety
/// `events_path` is a NUL-terminated string, `config_json` is null or one,
/// and `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_dataset_prepare(
    events_path: *const c_char,
    config_json: *const c_char,
    out: *mut *mut Tem4ctrDataset,
) -> Tem4ctrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = config(config_json)?;
        let file = std::fs::File::open(text(events_path, "events_path")?).map_err(Error::from)?;
        let events = parse_events(std::io::BufReader::new(file))?;
        let inner = harness::prepare_dataset(&events, &cfg)?;
        *out = Box::into_raw(Box::new(Tem4ctrDataset { inner }));
        Ok(())
    })
}

/// Sample counts of a dataset.
///
/// # Safety
/// `dataset` is a live handle; the count pointers are valid or null.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_dataset_sizes(
    dataset: *const Tem4ctrDataset,
    out_train: *mut usize,
    out_test: *mut usize,
) -> Tem4ctrStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if let Some(t) = out_train.as_mut() {
            *t = d.inner.train.len();
        }
        if let Some(t) = out_test.as_mut() {
            *t = d.inner.test.len();
        }
        Ok(())
    })
}

/// Release a dataset. Null is ignored.
///
/// # Safety
/// `dataset` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_dataset_free(dataset: *mut Tem4ctrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Train on a dataset and report the test AUC. The new model is returned
/// through `out_model` when it is non-null.
///
/// # Safety
/// `dataset` is a live handle, `config_json` null or a NUL-terminated
/// string, `out_auc` valid, `out_model` valid or null.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_train(
    dataset: *const Tem4ctrDataset,
    config_json: *const c_char,
    out_model: *mut *mut Tem4ctrModel,
    out_auc: *mut f64,
) -> Tem4ctrStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out_auc = out_ref(out_auc, "out_auc")?;
        let cfg = config(config_json)?;
        let (model, report) = harness::train(&d.inner, &cfg)?;
        *out_auc = report.auc;
        if let Some(slot) = out_model.as_mut() {
            *slot = Box::into_raw(Box::new(Tem4ctrModel { inner: model }));
        }
        Ok(())
    })
}

/// Area under the ROC curve with half credit for ties. Labels are 0 or 1.
///
/// # Safety
/// `scores` and `labels` point to `len` elements (or are null when
/// `len` is 0); `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_auc(scores: *const f64, labels: *const u8, len: usize, out: *mut f64) -> Tem4ctrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let (scores, labels) = if len == 0 {
            (&[][..], &[][..])
        } else {
            if scores.is_null() || labels.is_null() {
                return Err(null("scores or labels"));
            }
            (std::slice::from_raw_parts(scores, len), std::slice::from_raw_parts(labels, len))
        };
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Fail(Tem4ctrStatus::Config, format!("label {bad} is not 0 or 1")));
        }
        let labels: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        *out = harness::auc(scores, &labels)?;
        Ok(())
    })
}

/// Relative improvement of `auc` over `auc_base`, in percent.
///
/// # Safety
/// `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tem4ctr_rela_impr(auc: f64, auc_base: f64, out: *mut f64) -> Tem4ctrStatus {
    guard(|| {
        *out_ref(out, "out")? = harness::rela_impr(auc, auc_base)?;
        Ok(())
    })
}

/// Exposure-context search over ascending `timestamps` of unclicked
/// impressions. Writes the chosen positions (ascending) into `out_idx`,
/// which must hold the context capacity (`l`, or `2l` with `per_side`
/// unless `past_only`), and their number into `out_count`.
///
/// # Safety
/// `timestamps` points to `len` elements (or is null when `len` is 0),
/// `out_idx` to `out_capacity` elements, and `out_count` is valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tem4ctr_search_context(
    click_ts: i64,
    timestamps: *const i64,
    len: usize,
    l: usize,
    per_side: bool,
    past_only: bool,
    out_idx: *mut usize,
    out_capacity: usize,
    out_count: *mut usize,
) -> Tem4ctrStatus {
    guard(|| {
        let out_count = out_ref(out_count, "out_count")?;
        let ts = if len == 0 {
            &[][..]
        } else if timestamps.is_null() {
            return Err(null("timestamps"));
        } else {
            std::slice::from_raw_parts(timestamps, len)
        };
        if ts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Fail(Tem4ctrStatus::Config, "timestamps must be ascending".into()));
        }
        let opts = SearchOptions { per_side, past_only };
        if out_capacity < opts.capacity(l) {
            return Err(Fail(
                Tem4ctrStatus::Shape,
                format!("output holds {out_capacity} positions, context capacity is {}", opts.capacity(l)),
            ));
        }
        // Item ids carry the input positions through the search.
        let records: Vec<ItemRecord> = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| ItemRecord {
                item_id: i as u64,
                category_id: 0,
                timestamp: t,
                dense_feature: None,
            })
            .collect();
        let ctx = search_context(click_ts, &records, l, opts);
        if ctx.count() > 0 && out_idx.is_null() {
            return Err(null("out_idx"));
        }
        for (k, item) in ctx.items.iter().enumerate() {
            *out_idx.add(k) = item.item_id as usize;
        }
        *out_count = ctx.count();
        Ok(())
    })
}
