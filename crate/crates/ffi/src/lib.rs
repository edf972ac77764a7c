//! C ABI over the eegformer library.
//!
//! Every fallible function returns an [`EegStatus`]; on failure the message
//! is available from [`eeg_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use eegformer::features::featurize_signal;
use eegformer::model::{Checkpoint, Model};
use eegformer::numerics::Tensor;
use eegformer::signal_io::{read_record, SignalRecord};
use eegformer::training::{auprc, auroc, predict_scores};
use eegformer::Error;

/// Result codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    Dimension = 6,
    Config = 7,
    UndefinedMetric = 8,
    NonFinite = 9,
    Internal = 10,
}

/// Loaded model; create with `eeg_model_load`.
pub struct EegModel {
    model: Model,
}

/// Decoded signal record; create with `eeg_record_read`.
pub struct EegRecord {
    record: SignalRecord,
    labels: Vec<CString>,
}

/// Model geometry needed to size caller buffers.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EegModelDims {
    pub hidden_dim: usize,
    pub codebook_size: usize,
    pub patch_len: usize,
    pub stride: usize,
    /// Samples per channel expected by tokenize/predict.
    pub window_len: usize,
    /// Tokens per channel.
    pub patch_count: usize,
    pub feature_dim: usize,
    /// 0 = no head, 1 = binary, >= 2 = classes.
    pub head_outputs: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> EegStatus {
    match err {
        Error::Dimension(_) => EegStatus::Dimension,
        Error::Config(_) => EegStatus::Config,
        Error::Format { .. } => EegStatus::Format,
        Error::NonFinite(_) => EegStatus::NonFinite,
        Error::UndefinedMetric(_) => EegStatus::UndefinedMetric,
        Error::Checkpoint(_) => EegStatus::Checkpoint,
        Error::Diverged { .. } => EegStatus::NonFinite,
        Error::InvalidInput(_) => EegStatus::InvalidArgument,
        Error::Io { .. } => EegStatus::Io,
    }
}

struct Fail(EegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EegStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error or panic and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EegStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EegStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EegStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EegStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const EegModel) -> Result<&'a EegModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn record_ref<'a>(r: *const EegRecord) -> Result<&'a EegRecord, Fail> {
    r.as_ref().ok_or_else(|| null("record"))
}

unsafe fn signal_arg(model: &Model, samples: *const f64, channels: usize, len: usize) -> Result<Tensor, Fail> {
    if samples.is_null() {
        return Err(null("samples"));
    }
    let expected = model.config().window_len;
    if channels == 0 || len != expected {
        return Err(Fail(
            EegStatus::Dimension,
            format!("signal must be channels >= 1 by {expected} samples, got {channels} x {len}"),
        ));
    }
    let data = slice::from_raw_parts(samples, channels * len).to_vec();
    Ok(Tensor::new(vec![channels, len], data)?)
}

unsafe fn out_slice<'a, T>(out: *mut T, out_len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    if out_len < needed {
        return Err(Fail(
            EegStatus::InvalidArgument,
            format!("{what} holds {out_len} values, {needed} required"),
        ));
    }
    Ok(slice::from_raw_parts_mut(out, needed))
}

/// Message for the most recent failure on this thread, or null if the last
/// call succeeded. Valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn eeg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn eeg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a valid nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eeg_model_load(path: *const c_char, out: *mut *mut EegModel) -> EegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let model = Checkpoint::load(&path)?.to_model()?;
        *out = Box::into_raw(Box::new(EegModel { model }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `eeg_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eeg_model_free(model: *mut EegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model's geometry into `out`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eeg_model_dims(model: *const EegModel, out: *mut EegModelDims) -> EegStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = m.model.config();
        *out = EegModelDims {
            hidden_dim: c.hidden_dim,
            codebook_size: c.codebook_size,
            patch_len: c.patch.patch_len,
            stride: c.patch.stride,
            window_len: c.window_len,
            patch_count: c.patch_count(),
            feature_dim: c.feature_dim(),
            head_outputs: c.head_outputs,
        };
        Ok(())
    })
}

/// Tokenizes one window given as `channels x window_len` row-major samples
/// at 250 Hz. Writes `channels x patch_count` token ids to `out_tokens`.
///
/// # Safety
/// `samples` must hold `channels * len` values and `out_tokens` at least
/// `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn eeg_model_tokenize(
    model: *const EegModel,
    samples: *const f64,
    channels: usize,
    len: usize,
    out_tokens: *mut u32,
    out_len: usize,
) -> EegStatus {
    guard(|| {
        let m = &model_ref(model)?.model;
        let signal = signal_arg(m, samples, channels, len)?;
        let out = out_slice(out_tokens, out_len, channels * m.config().patch_count(), "out_tokens")?;
        let features = featurize_signal(&signal, &m.config().patch)?;
        let grids = m.tokenize(&[&features])?;
        out.copy_from_slice(grids[0].indices());
        Ok(())
    })
}

/// Class scores for one window: one sigmoid probability for a binary head,
/// otherwise a softmax over `head_outputs` classes.
///
/// # Safety
/// As for `eeg_model_tokenize`; `out_scores` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn eeg_model_predict(
    model: *const EegModel,
    samples: *const f64,
    channels: usize,
    len: usize,
    out_scores: *mut f64,
    out_len: usize,
) -> EegStatus {
    guard(|| {
        let m = &model_ref(model)?.model;
        if !m.has_head() {
            return Err(Fail(EegStatus::Checkpoint, "model has no classification head".into()));
        }
        let signal = signal_arg(m, samples, channels, len)?;
        let out = out_slice(out_scores, out_len, m.config().head_outputs, "out_scores")?;
        let features = featurize_signal(&signal, &m.config().patch)?;
        let scores = predict_scores(m, &[features], 1)?;
        out.copy_from_slice(&scores);
        Ok(())
    })
}

/// Reads a signal record file into a new handle.
///
/// # Safety
/// `path` must be a valid nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eeg_record_read(path: *const c_char, out: *mut *mut EegRecord) -> EegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let record = read_record(path_arg(path)?)?;
        let labels = record
            .channel_labels()
            .iter()
            .map(|l| CString::new(l.as_str()).map_err(|_| Fail(EegStatus::Format, "channel label contains nul".into())))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(EegRecord { record, labels }));
        Ok(())
    })
}

/// Releases a record handle. Null is ignored.
///
/// # Safety
/// `record` must come from `eeg_record_read` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eeg_record_free(record: *mut EegRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// Channel count, or 0 for a null handle.
///
/// # Safety
/// `record` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eeg_record_channels(record: *const EegRecord) -> usize {
    record.as_ref().map_or(0, |r| r.record.channel_count())
}

/// Samples per channel, or 0 for a null handle.
///
/// # Safety
/// `record` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eeg_record_sample_count(record: *const EegRecord) -> usize {
    record.as_ref().map_or(0, |r| r.record.sample_count())
}

/// Sample rate in Hz, or 0 for a null handle.
///
/// # Safety
/// `record` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eeg_record_sample_rate(record: *const EegRecord) -> u32 {
    record.as_ref().map_or(0, |r| r.record.sample_rate_hz())
}

/// Label of channel `index`, or null when out of range. Owned by the handle.
///
/// # Safety
/// `record` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eeg_record_channel_label(record: *const EegRecord, index: usize) -> *const c_char {
    record
        .as_ref()
        .and_then(|r| r.labels.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Copies the `channels x samples` row-major data into `out`.
///
/// # Safety
/// `record` must be a live handle and `out` hold `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn eeg_record_copy_samples(record: *const EegRecord, out: *mut f64, out_len: usize) -> EegStatus {
    guard(|| {
        let r = &record_ref(record)?.record;
        let data = r.samples().data();
        out_slice(out, out_len, data.len(), "out")?.copy_from_slice(data);
        Ok(())
    })
}

unsafe fn metric_args(scores: *const f64, labels: *const u8, n: usize) -> Result<(Vec<f64>, Vec<bool>), Fail> {
    if scores.is_null() {
        return Err(null("scores"));
    }
    if labels.is_null() {
        return Err(null("labels"));
    }
    let s = slice::from_raw_parts(scores, n).to_vec();
    let l = slice::from_raw_parts(labels, n).iter().map(|&b| b != 0).collect();
    Ok((s, l))
}

/// Area under the ROC curve; ties count one half. Labels are nonzero for
/// positives.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn eeg_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> EegStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (s, l) = metric_args(scores, labels, n)?;
        *out = auroc(&s, &l)?;
        Ok(())
    })
}

/// Average precision over scores sorted in descending order.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn eeg_auprc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> EegStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (s, l) = metric_args(scores, labels, n)?;
        *out = auprc(&s, &l)?;
        Ok(())
    })
}
