//! C ABI over compact `.lum` models: load, inspect, run dense forward passes.
//!
//! Every fallible call returns a [`LumosStatus`]; on failure the message is
//! available from [`lumos_last_error_message`] on the same thread until the
//! next failing call. Models are opaque handles released with
//! [`lumos_model_free`]. A loaded model is read-only, so one handle may be
//! shared by concurrent `lumos_model_forward` calls.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lumos::autodiff::Tensor;
use lumos::batch::Batch;
use lumos::extraction::{deserialize, CompactModel};

/// Result codes of the C ABI.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LumosStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Execution = 6,
    Panic = 7,
}

/// Opaque compact model.
pub struct LumosModel {
    inner: CompactModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: LumosStatus, msg: impl Into<String>) -> LumosStatus {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guarded(f: impl FnOnce() -> LumosStatus) -> LumosStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(LumosStatus::Panic, "internal panic"))
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lumos_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lumos_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn publish(model: CompactModel, out: *mut *mut LumosModel) -> LumosStatus {
    // SAFETY: callers checked `out` for NULL; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(LumosModel { inner: model })) };
    LumosStatus::Ok
}

/// Parses a serialized model held in memory.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` to a writable pointer
/// slot. On success `*out` owns a model to be released with
/// [`lumos_model_free`]; on failure `*out` is set to NULL.
#[no_mangle]
pub unsafe extern "C" fn lumos_model_from_bytes(data: *const u8, len: usize, out: *mut *mut LumosModel) -> LumosStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LumosStatus::NullPointer, "out is NULL");
        }
        *out = ptr::null_mut();
        if data.is_null() {
            return fail(LumosStatus::NullPointer, "data is NULL");
        }
        let bytes = std::slice::from_raw_parts(data, len);
        match deserialize(bytes) {
            Ok(m) => publish(m, out),
            Err(e) => fail(LumosStatus::Format, e.to_string()),
        }
    })
}

/// Reads and parses a `.lum` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer slot.
/// Ownership rules as for [`lumos_model_from_bytes`].
#[no_mangle]
pub unsafe extern "C" fn lumos_model_load(path: *const c_char, out: *mut *mut LumosModel) -> LumosStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LumosStatus::NullPointer, "out is NULL");
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return fail(LumosStatus::NullPointer, "path is NULL");
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(LumosStatus::InvalidArgument, "path is not UTF-8");
        };
        let bytes = match std::fs::read(p) {
            Ok(b) => b,
            Err(e) => return fail(LumosStatus::Io, format!("{p}: {e}")),
        };
        match deserialize(&bytes) {
            Ok(m) => publish(m, out),
            Err(e) => fail(LumosStatus::Format, format!("{p}: {e}")),
        }
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lumos_model_free(model: *mut LumosModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be NULL or a live handle.
unsafe fn model_ref<'a>(model: *const LumosModel) -> Option<&'a CompactModel> {
    model.as_ref().map(|m| &m.inner)
}

/// Values per sample of the full (unselected) model input; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lumos_model_input_width(model: *const LumosModel) -> usize {
    model_ref(model).map_or(0, |m| m.input_layout.numel())
}

/// Values per sample of the model output; 0 for NULL or empty models.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lumos_model_output_width(model: *const LumosModel) -> usize {
    model_ref(model).and_then(|m| m.nodes.get(m.output)).map_or(0, |n| n.layout.numel())
}

/// Weight and bias elements; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lumos_model_param_count(model: *const LumosModel) -> usize {
    model_ref(model).map_or(0, CompactModel::param_count)
}

/// Copies the kept input unit indices into `out` (capacity `cap`) and stores
/// their total count in `*count`. With `cap` too small nothing is copied and
/// `LUMOS_STATUS_SHAPE` is returned; `*count` still tells the required size.
///
/// # Safety
/// `model` must be a live handle, `count` writable, and `out` valid for `cap`
/// writes (may be NULL when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn lumos_model_input_features(
    model: *const LumosModel,
    out: *mut usize,
    cap: usize,
    count: *mut usize,
) -> LumosStatus {
    guarded(|| {
        let Some(m) = model_ref(model) else { return fail(LumosStatus::NullPointer, "model is NULL") };
        if count.is_null() {
            return fail(LumosStatus::NullPointer, "count is NULL");
        }
        let keep = &m.input_keep;
        *count = keep.len();
        if keep.len() > cap {
            return fail(LumosStatus::Shape, format!("{} features do not fit in {cap}", keep.len()));
        }
        if !keep.is_empty() {
            if out.is_null() {
                return fail(LumosStatus::NullPointer, "out is NULL");
            }
            ptr::copy_nonoverlapping(keep.as_ptr(), out, keep.len());
        }
        LumosStatus::Ok
    })
}

/// Runs `rows` samples of full-width input (`rows · input_width` values,
/// row-major) and writes `rows · output_width` values to `output`. Graph
/// models are not supported through this interface.
///
/// # Safety
/// `input` must be valid for `rows · input_width` reads and `output` for
/// `output_len` writes; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lumos_model_forward(
    model: *const LumosModel,
    input: *const f64,
    rows: usize,
    output: *mut f64,
    output_len: usize,
) -> LumosStatus {
    guarded(|| {
        let Some(m) = model_ref(model) else { return fail(LumosStatus::NullPointer, "model is NULL") };
        if input.is_null() || output.is_null() {
            return fail(LumosStatus::NullPointer, "input or output is NULL");
        }
        if m.nodes.is_empty() {
            return fail(LumosStatus::InvalidArgument, "the model has no layers");
        }
        if m.graph_input {
            return fail(LumosStatus::InvalidArgument, "graph models need graph batches, which the C interface does not carry");
        }
        let width = m.input_layout.numel();
        let out_width = m.nodes[m.output].layout.numel();
        let (Some(n_in), Some(n_out)) = (rows.checked_mul(width), rows.checked_mul(out_width)) else {
            return fail(LumosStatus::Shape, "row count overflows");
        };
        if output_len != n_out {
            return fail(LumosStatus::Shape, format!("output buffer holds {output_len} values, need {n_out}"));
        }
        let data = std::slice::from_raw_parts(input, n_in).to_vec();
        let mut shape = vec![rows];
        shape.extend(m.input_layout.shape());
        let x = match Tensor::new(shape, data) {
            Ok(x) => x,
            Err(e) => return fail(LumosStatus::Shape, e.to_string()),
        };
        match m.forward(&Batch::dense(x)) {
            Ok(y) => {
                ptr::copy_nonoverlapping(y.data().as_ptr(), output, n_out);
                LumosStatus::Ok
            }
            Err(e) => fail(LumosStatus::Execution, e.to_string()),
        }
    })
}
