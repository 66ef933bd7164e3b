//! C ABI over the `sourcetrace` library.
//!
//! Conventions:
//! - every fallible function returns an [`StStatus`] and writes results through out-pointers;
//! - handles are opaque and must be released with their `*_free` function;
//! - after a non-zero status, [`st_last_error`] copies a message for the calling thread.
//!
//! The generated header lives at `include/sourcetrace.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sourcetrace::dataset::{load_embedding_file, EmbeddingTable};
use sourcetrace::metrics::eer_binary;
use sourcetrace::models::{load_checkpoint, Model};
use sourcetrace::nn::Matrix;
use sourcetrace::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptFile = 4,
    DimMismatch = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

/// A loaded embedding file.
pub struct StTable {
    inner: EmbeddingTable,
    labels: Vec<u16>,
}

/// A trained model loaded from a checkpoint.
pub struct StModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("interior NULs removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> StStatus {
    match e {
        Error::Io { .. } => StStatus::Io,
        Error::NotSteb(_) | Error::CorruptFile { .. } | Error::CorruptCheckpoint(_) | Error::Json { .. } => {
            StStatus::CorruptFile
        }
        Error::DimMismatch { .. } | Error::Shape(_) | Error::CheckpointMismatch(_) => StStatus::DimMismatch,
        Error::Numerical(_) | Error::NotSymmetric(_) | Error::DivergedParam(_) | Error::Diverged { .. } => {
            StStatus::Numerical
        }
        e if e.is_user_error() => StStatus::InvalidArgument,
        _ => StStatus::Internal,
    }
}

/// Run `f`, turning errors and panics into a status plus a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), (StStatus, String)>) -> StStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            StStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            StStatus::Panic
        }
    }
}

fn lib(e: Error) -> (StStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StStatus, String) {
    (StStatus::NullArgument, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (StStatus, String) {
    (StStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (StStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Copy `text` plus a NUL into `buf`. Returns the size needed including the NUL.
unsafe fn copy_out(text: &[u8], buf: *mut c_char, cap: usize) -> usize {
    let need = text.len() + 1;
    if !buf.is_null() && cap > 0 {
        let n = text.len().min(cap - 1);
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
    }
    need
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (truncating to `cap`).
///
/// Returns the buffer size needed for the full message, or 0 if there is none.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn st_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(msg) => copy_out(msg.as_bytes(), buf, cap),
        None => 0,
    })
}

/// Load an STEB embedding file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_table_load(path: *const c_char, out: *mut *mut StTable) -> StStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let table = load_embedding_file(&path_arg(path)?).map_err(lib)?;
        let labels = table.labels().to_vec();
        *out = Box::into_raw(Box::new(StTable { inner: table, labels }));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a handle from [`st_table_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_table_free(table: *mut StTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Number of vectors; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_table_len(table: *const StTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.len())
}

/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_table_dim(table: *const StTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.dim())
}

/// Number of classes; 0 for an unlabeled table.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_table_n_classes(table: *const StTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.n_classes())
}

/// Row-major `len x dim` vectors, valid while the handle lives.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_table_vectors(table: *const StTable) -> *const f32 {
    table.as_ref().map_or(ptr::null(), |t| t.inner.vectors().as_ptr())
}

/// `len` class indices, or null for an unlabeled table. Valid while the handle lives.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_table_labels(table: *const StTable) -> *const u16 {
    match table.as_ref() {
        Some(t) if t.inner.is_labeled() => t.labels.as_ptr(),
        _ => ptr::null(),
    }
}

/// Copy class name `index` into `buf`; `needed` receives the size including the NUL.
///
/// Returns `BufferTooSmall` (after writing a truncated name) when `cap < needed`.
///
/// # Safety
/// `table` must be a live handle, `buf` null or `cap` writable bytes, `needed` null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_table_class_name(
    table: *const StTable,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> StStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let name = t
            .inner
            .class_names()
            .get(index)
            .ok_or_else(|| invalid(format!("class index {index} out of range ({} classes)", t.inner.n_classes())))?;
        let need = copy_out(name.as_bytes(), buf, cap);
        if !needed.is_null() {
            *needed = need;
        }
        if cap < need {
            return Err((StStatus::BufferTooSmall, format!("class name needs {need} bytes, got {cap}")));
        }
        Ok(())
    })
}

/// Load a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_model_load(path: *const c_char, out: *mut *mut StModel) -> StStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let (model, _) = load_checkpoint(&path_arg(path)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(StModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`st_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_model_free(model: *mut StModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_model_n_classes(model: *const StModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().n_classes)
}

/// Input widths; `d_in_b` is 0 for single-view architectures.
///
/// # Safety
/// `model` must be a live handle; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn st_model_input_dims(model: *const StModel, d_in_a: *mut usize, d_in_b: *mut usize) -> StStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if d_in_a.is_null() || d_in_b.is_null() {
            return Err(null("output dimension pointer"));
        }
        let c = m.inner.config();
        *d_in_a = c.d_in_a;
        *d_in_b = c.d_in_b;
        Ok(())
    })
}

/// Class probabilities for `n` rows, written row-major into `out` (`n x n_classes`).
///
/// `b` may be null for single-view models; fusion models require it.
///
/// # Safety
/// `a` must hold `n * d_a` floats, `b` null or `n * d_b` floats, `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn st_model_predict_proba(
    model: *const StModel,
    a: *const f32,
    n: usize,
    d_a: usize,
    b: *const f32,
    d_b: usize,
    out: *mut f32,
    out_len: usize,
) -> StStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if a.is_null() {
            return Err(null("a"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let c = m.inner.config().n_classes;
        if out_len < n * c {
            return Err((StStatus::BufferTooSmall, format!("output needs {} floats, got {out_len}", n * c)));
        }
        let va = Matrix::new(n, d_a, std::slice::from_raw_parts(a, n * d_a).to_vec()).map_err(lib)?;
        let vb = if b.is_null() {
            None
        } else {
            Some(Matrix::new(n, d_b, std::slice::from_raw_parts(b, n * d_b).to_vec()).map_err(lib)?)
        };
        let probs = m.inner.predict_proba(&va, vb.as_ref()).map_err(lib)?;
        ptr::copy_nonoverlapping(probs.data().as_ptr(), out, n * c);
        Ok(())
    })
}

/// Binary equal error rate of `n` scores; `positive[i]` is non-zero for target trials.
///
/// # Safety
/// `scores` and `positive` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn st_eer_binary(scores: *const f64, positive: *const u8, n: usize, out: *mut f64) -> StStatus {
    guard(|| {
        if scores.is_null() || positive.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let s = std::slice::from_raw_parts(scores, n);
        let flags: Vec<bool> = std::slice::from_raw_parts(positive, n).iter().map(|&p| p != 0).collect();
        *out = eer_binary(s, &flags).map_err(lib)?;
        Ok(())
    })
}
