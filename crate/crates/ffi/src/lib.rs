//! C ABI over `cmt-core`: metrics, attention rollout and checkpoint
//! inference.
//!
//! Every fallible function returns a [`CmtStatus`]. On failure the message
//! is kept per thread and can be read with [`cmt_last_error`]. Handles are
//! opaque; each `*_load` has a matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use cmt_core::autodiff::Tensor;
use cmt_core::interpret::{attention_rollout, RolloutInput};
use cmt_core::model::{load_checkpoint, predict, CheckpointMeta, ModelInput, ModelParams};
use cmt_core::traineval::{auprc, auroc};
use cmt_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmtStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Arguments or file contents failed validation.
    InvalidInput = 2,
    /// A file could not be read.
    Io = 3,
    /// The result is undefined for this input (e.g. AUROC with one class).
    Undefined = 4,
    /// A caller-provided buffer is too small.
    BufferTooSmall = 5,
    /// Internal failure, including caught panics.
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: CmtStatus, msg: impl Into<String>) -> CmtStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> CmtStatus {
    let status = match &e {
        Error::Io { .. } | Error::NoManifest(_) => CmtStatus::Io,
        e if e.is_validation() => CmtStatus::InvalidInput,
        _ => CmtStatus::Internal,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> CmtStatus) -> CmtStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(CmtStatus::Internal, "panic in cmt"))
}

/// Message of the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cmt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cmt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, CmtStatus> {
    if p.is_null() {
        return Err(fail(CmtStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(CmtStatus::InvalidInput, "path is not UTF-8"))
}

unsafe fn metric_args<'a>(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> Result<(&'a [f64], Vec<bool>), CmtStatus> {
    if out.is_null() || (n > 0 && (scores.is_null() || labels.is_null())) {
        return Err(fail(CmtStatus::NullPointer, "null argument"));
    }
    if n == 0 {
        return Ok((&[], Vec::new()));
    }
    let s = slice::from_raw_parts(scores, n);
    let l = slice::from_raw_parts(labels, n).iter().map(|&b| b != 0).collect();
    Ok((s, l))
}

fn write_metric(v: Option<f64>, out: *mut f64, what: &str) -> CmtStatus {
    match v {
        // SAFETY: checked non-null by metric_args
        Some(v) => unsafe {
            *out = v;
            set_error("");
            CmtStatus::Ok
        },
        None => fail(CmtStatus::Undefined, format!("{what} is undefined without both classes")),
    }
}

/// AUROC of `n` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements and `out` to
/// one writable `double`.
#[no_mangle]
pub unsafe extern "C" fn cmt_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> CmtStatus {
    guard(|| match metric_args(scores, labels, n, out) {
        Ok((s, l)) => write_metric(auroc(s, &l), out, "AUROC"),
        Err(st) => st,
    })
}

/// Average precision of `n` scores against 0/1 labels.
///
/// # Safety
/// As for [`cmt_auroc`].
#[no_mangle]
pub unsafe extern "C" fn cmt_auprc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> CmtStatus {
    guard(|| match metric_args(scores, labels, n, out) {
        Ok((s, l)) => write_metric(auprc(s, &l), out, "AUPRC"),
        Err(st) => st,
    })
}

/// Attention rollout over `n_layers` row-major `n×n` matrices stored back
/// to back in `layers`; writes the `n×n` result to `out`.
///
/// # Safety
/// `layers` must hold `n_layers·n·n` doubles and `out` room for `n·n`.
#[no_mangle]
pub unsafe extern "C" fn cmt_rollout(layers: *const f64, n_layers: usize, n: usize, out: *mut f64) -> CmtStatus {
    guard(|| {
        if layers.is_null() || out.is_null() {
            return fail(CmtStatus::NullPointer, "null argument");
        }
        let data = slice::from_raw_parts(layers, n_layers * n * n);
        let mats: Result<Vec<Tensor<f64>>, Error> =
            data.chunks(n * n.max(1)).map(|c| Tensor::new(vec![n, n], c.to_vec())).collect();
        let input = match mats {
            Ok(layers) => RolloutInput {
                layers,
                tokens: (0..n).map(|i| i.to_string()).collect(),
                word_groups: Vec::new(),
                chunk_tokens: None,
            },
            Err(e) => return from_error(e),
        };
        match attention_rollout(&input) {
            Ok(r) => {
                slice::from_raw_parts_mut(out, n * n).copy_from_slice(r.data());
                set_error("");
                CmtStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// A rollout input directory (`layer_<i>.cmt` plus `sidecar.json`) with
/// its rollout matrix.
pub struct CmtRollout {
    input: RolloutInput,
    result: Tensor<f64>,
}

/// Reads a rollout directory and computes its rollout.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cmt_rollout_load(dir: *const c_char, out: *mut *mut CmtRollout) -> CmtStatus {
    guard(|| {
        if out.is_null() {
            return fail(CmtStatus::NullPointer, "out is null");
        }
        let path = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let loaded = RolloutInput::read(&path).and_then(|input| {
            let result = attention_rollout(&input)?;
            Ok(CmtRollout { input, result })
        });
        match loaded {
            Ok(h) => {
                *out = Box::into_raw(Box::new(h));
                set_error("");
                CmtStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of tokens, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle from [`cmt_rollout_load`].
#[no_mangle]
pub unsafe extern "C" fn cmt_rollout_size(h: *const CmtRollout) -> usize {
    h.as_ref().map_or(0, |h| h.input.tokens.len())
}

/// Copies the `n×n` rollout matrix into `out` (capacity `len`).
///
/// # Safety
/// `h` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cmt_rollout_matrix(h: *const CmtRollout, out: *mut f64, len: usize) -> CmtStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return fail(CmtStatus::NullPointer, "handle is null") };
        if out.is_null() {
            return fail(CmtStatus::NullPointer, "out is null");
        }
        let data = h.result.data();
        if len < data.len() {
            return fail(CmtStatus::BufferTooSmall, format!("need {} doubles, got {len}", data.len()));
        }
        slice::from_raw_parts_mut(out, data.len()).copy_from_slice(data);
        set_error("");
        CmtStatus::Ok
    })
}

/// # Safety
/// `h` must be null or a handle from [`cmt_rollout_load`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn cmt_rollout_free(h: *mut CmtRollout) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// A trained checkpoint.
pub struct CmtModel {
    params: ModelParams<f32>,
    meta: CheckpointMeta,
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cmt_model_load(dir: *const c_char, out: *mut *mut CmtModel) -> CmtStatus {
    guard(|| {
        if out.is_null() {
            return fail(CmtStatus::NullPointer, "out is null");
        }
        let path = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(&path) {
            Ok((params, meta)) => {
                *out = Box::into_raw(Box::new(CmtModel { params, meta }));
                set_error("");
                CmtStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Logits per hour, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle from [`cmt_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cmt_model_n_outputs(h: *const CmtModel) -> usize {
    h.as_ref().map_or(0, |h| h.params.config.n_outputs)
}

/// EHR width the model expects, or 0 for a null handle.
///
/// # Safety
/// As for [`cmt_model_n_outputs`].
#[no_mangle]
pub unsafe extern "C" fn cmt_model_d_ehr(h: *const CmtModel) -> usize {
    h.as_ref().map_or(0, |h| h.meta.config.d_ehr)
}

/// Note row width (embedding plus time feature), or 0 for a null handle.
///
/// # Safety
/// As for [`cmt_model_n_outputs`].
#[no_mangle]
pub unsafe extern "C" fn cmt_model_d_cn(h: *const CmtModel) -> usize {
    h.as_ref().map_or(0, |h| h.meta.config.d_cn)
}

/// Runs the model with dropout off on already scaled inputs.
///
/// `ehr` is `hours×d_ehr` row-major, `notes` is `n_notes×d_cn` (visible
/// notes only) with entry hours `note_times`. Writes `hours×n_outputs`
/// logits into `out` (capacity `len`).
///
/// # Safety
/// Pointers must reference buffers of the stated sizes; `notes` and
/// `note_times` may be null when `n_notes` is 0.
#[no_mangle]
pub unsafe extern "C" fn cmt_model_predict(
    h: *const CmtModel,
    ehr: *const f32,
    hours: usize,
    notes: *const f32,
    note_times: *const f64,
    n_notes: usize,
    out: *mut f32,
    len: usize,
) -> CmtStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return fail(CmtStatus::NullPointer, "handle is null") };
        if ehr.is_null() || out.is_null() || (n_notes > 0 && (notes.is_null() || note_times.is_null())) {
            return fail(CmtStatus::NullPointer, "null argument");
        }
        let cfg = &h.params.config;
        let need = hours * cfg.n_outputs;
        if len < need {
            return fail(CmtStatus::BufferTooSmall, format!("need {need} floats, got {len}"));
        }
        let ehr = Tensor::new(vec![hours, cfg.d_ehr], slice::from_raw_parts(ehr, hours * cfg.d_ehr).to_vec());
        let (note_data, times) = if n_notes == 0 {
            (Vec::new(), Vec::new())
        } else {
            (slice::from_raw_parts(notes, n_notes * cfg.d_cn).to_vec(), slice::from_raw_parts(note_times, n_notes).to_vec())
        };
        let result = ehr.and_then(|ehr| {
            let notes = Tensor::new(vec![n_notes, cfg.d_cn], note_data)?;
            let input = ModelInput { stay_id: "ffi".into(), ehr, notes, note_times: times };
            predict(&h.params, &input)
        });
        match result {
            Ok((logits, _)) => {
                slice::from_raw_parts_mut(out, need).copy_from_slice(logits.data());
                set_error("");
                CmtStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `h` must be null or a handle from [`cmt_model_load`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn cmt_model_free(h: *mut CmtModel) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
