//! C ABI over the compiler pipeline.
//!
//! A model is loaded, compiled and memory-planned in one call and handed
//! back as an opaque [`TinyaotModel`] handle. Every fallible function
//! returns a [`TinyaotStatus`]; on failure the message is available from
//! [`tinyaot_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tinyaot::codegen::{emit_source, EmitOptions};
use tinyaot::compile::{execute_plan, fold_constants, CompiledPlan};
use tinyaot::memory::{plan_memory, MemoryReport};
use tinyaot::{build_graph, load_model, Error};

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TinyaotStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Range = 5,
    Shape = 6,
    Unsupported = 7,
    Overflow = 8,
    Infeasible = 9,
    Size = 10,
    Emit = 11,
    Panic = 12,
}

impl From<&Error> for TinyaotStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => TinyaotStatus::Io,
            Error::Format { .. } => TinyaotStatus::Format,
            Error::Range { .. } => TinyaotStatus::Range,
            Error::Shape { .. } => TinyaotStatus::Shape,
            Error::Unsupported { .. } => TinyaotStatus::Unsupported,
            Error::Overflow { .. } => TinyaotStatus::Overflow,
            Error::Infeasible { .. } => TinyaotStatus::Infeasible,
            Error::Size { .. } => TinyaotStatus::Size,
            Error::Emit(_) => TinyaotStatus::Emit,
        }
    }
}

/// A compiled, memory-planned model. Opaque to C.
pub struct TinyaotModel {
    plan: CompiledPlan,
    report: MemoryReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: TinyaotStatus, message: impl Into<String>) -> TinyaotStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> TinyaotStatus) -> TinyaotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(TinyaotStatus::Panic, "internal panic"),
    }
}

fn from_error(e: Error) -> TinyaotStatus {
    fail(TinyaotStatus::from(&e), e.to_string())
}

/// Message describing the most recent failure on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tinyaot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads the model at `path`, folds its constants and plans its memory.
/// A `ram_budget` of 0 means no budget. On success `*out` receives a
/// handle to release with [`tinyaot_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_load(
    path: *const c_char,
    ram_budget: usize,
    out: *mut *mut TinyaotModel,
) -> TinyaotStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(TinyaotStatus::NullArgument, "path and out must not be NULL");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(TinyaotStatus::InvalidUtf8, "path is not valid UTF-8");
        };
        let budget = (ram_budget > 0).then_some(ram_budget);
        let compiled = load_model(path)
            .and_then(|m| build_graph(&m))
            .and_then(|g| fold_constants(&g))
            .and_then(|p| plan_memory(&p, budget));
        match compiled {
            Ok((plan, report)) => {
                *out = Box::into_raw(Box::new(TinyaotModel { plan, report }));
                TinyaotStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`tinyaot_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_free(model: *mut TinyaotModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of i8 elements `predict` reads. 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_input_len(model: *const TinyaotModel) -> usize {
    model.as_ref().map_or(0, |m| m.plan.input.len())
}

/// Number of i8 elements `predict` writes. 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_output_len(model: *const TinyaotModel) -> usize {
    model.as_ref().map_or(0, |m| m.plan.output.len())
}

/// Peak RAM working set of the planned model in bytes. 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_peak_ram_bytes(model: *const TinyaotModel) -> usize {
    model.as_ref().map_or(0, |m| m.report.peak_ram_bytes)
}

/// Bytes of constant data the model embeds. 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_flash_bytes(model: *const TinyaotModel) -> usize {
    model.as_ref().map_or(0, |m| m.report.flash_bytes)
}

/// Runs one inference.
///
/// # Safety
/// `input` must point to `input_len` readable bytes and `output` to
/// `output_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_predict(
    model: *const TinyaotModel,
    input: *const i8,
    input_len: usize,
    output: *mut i8,
    output_len: usize,
) -> TinyaotStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(TinyaotStatus::NullArgument, "model must not be NULL");
        };
        if input.is_null() || output.is_null() {
            return fail(
                TinyaotStatus::NullArgument,
                "input and output must not be NULL",
            );
        }
        let expected = m.plan.output.len();
        if output_len != expected {
            return from_error(Error::Size {
                expected,
                actual: output_len,
            });
        }
        let x = std::slice::from_raw_parts(input, input_len);
        match execute_plan(&m.plan, x) {
            Ok(y) => {
                std::slice::from_raw_parts_mut(output, output_len).copy_from_slice(&y);
                TinyaotStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Emits the model's inference source. On success `*out` receives a
/// NUL-terminated string to release with [`tinyaot_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_model_emit_source(
    model: *const TinyaotModel,
    out: *mut *mut c_char,
) -> TinyaotStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(TinyaotStatus::NullArgument, "model must not be NULL");
        };
        if out.is_null() {
            return fail(TinyaotStatus::NullArgument, "out must not be NULL");
        }
        *out = ptr::null_mut();
        match emit_source(&m.plan, &EmitOptions::default()) {
            Ok(src) => match CString::new(src) {
                Ok(s) => {
                    *out = s.into_raw();
                    TinyaotStatus::Ok
                }
                Err(_) => fail(TinyaotStatus::Emit, "source contains a NUL byte"),
            },
            Err(e) => from_error(e),
        }
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tinyaot_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(TinyaotStatus::Ok as i32, 0);
        assert_eq!(TinyaotStatus::Infeasible as i32, 9);
        assert_eq!(TinyaotStatus::Panic as i32, 12);
    }

    #[test]
    fn null_arguments_are_rejected() {
        let mut out = ptr::null_mut();
        unsafe {
            assert_eq!(
                tinyaot_model_load(ptr::null(), 0, &mut out),
                TinyaotStatus::NullArgument
            );
            assert_eq!(tinyaot_model_input_len(ptr::null()), 0);
            tinyaot_model_free(ptr::null_mut());
            tinyaot_string_free(ptr::null_mut());
            let msg = CStr::from_ptr(tinyaot_last_error_message());
            assert!(msg.to_str().unwrap().contains("NULL"));
        }
    }
}
