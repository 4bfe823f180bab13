//! C ABI over the experiment harness.
//!
//! The surface is deliberately small: parse an experiment spec from JSON,
//! run it, and read the result back as JSON or CSV. Results live behind an
//! opaque handle; strings returned to the caller are NUL-terminated copies
//! released with [`mgmc_string_free`]. Every entry point is panic-safe and
//! reports failures through [`MgmcStatus`] plus a thread-local message
//! retrieved with [`mgmc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mgmc::harness::{run_experiment, to_csv_string, to_json_string, ExperimentSpec, RunResult};

/// Status of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgmcStatus {
    /// Call succeeded.
    Ok = 0,
    /// A pointer argument was NULL or not valid UTF-8.
    InvalidArgument = 1,
    /// The spec failed to parse or validate.
    InvalidConfig = 2,
    /// The experiment started but failed at runtime.
    RuntimeError = 3,
    /// A panic was caught at the boundary; state may be inconsistent.
    Panic = 4,
}

/// Opaque experiment result; free with [`mgmc_result_free`].
pub struct MgmcResult {
    inner: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn classify(err: &mgmc::Error) -> MgmcStatus {
    match err {
        mgmc::Error::InvalidConfig(_) => MgmcStatus::InvalidConfig,
        _ => MgmcStatus::RuntimeError,
    }
}

fn to_owned_cstring(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Crate version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn mgmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Most recent error message on this thread, or NULL if none. The string
/// is a copy; release it with [`mgmc_string_free`].
#[no_mangle]
pub extern "C" fn mgmc_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|m| to_owned_cstring(m.to_string_lossy().into_owned()))
            .unwrap_or(ptr::null_mut())
    })
}

/// Parses an experiment spec from JSON, runs it, and stores the result in
/// `*out`. On any failure `*out` is NULL and the status identifies the
/// stage that failed.
///
/// # Safety
/// `spec_json` must be a valid NUL-terminated string and `out` a valid
/// pointer; both must stay alive for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn mgmc_run_json(
    spec_json: *const c_char,
    out: *mut *mut MgmcResult,
) -> MgmcStatus {
    clear_error();
    if out.is_null() {
        set_error("out pointer is NULL".into());
        return MgmcStatus::InvalidArgument;
    }
    *out = ptr::null_mut();
    if spec_json.is_null() {
        set_error("spec_json is NULL".into());
        return MgmcStatus::InvalidArgument;
    }
    let text = match CStr::from_ptr(spec_json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("spec_json is not valid UTF-8".into());
            return MgmcStatus::InvalidArgument;
        }
    };
    let spec: ExperimentSpec = match serde_json::from_str(text) {
        Ok(s) => s,
        Err(e) => {
            set_error(format!("spec does not parse: {e}"));
            return MgmcStatus::InvalidConfig;
        }
    };
    match catch_unwind(AssertUnwindSafe(|| run_experiment(&spec))) {
        Ok(Ok(result)) => {
            *out = Box::into_raw(Box::new(MgmcResult { inner: result }));
            MgmcStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            classify(&e)
        }
        Err(_) => {
            set_error("panic inside run_experiment".into());
            MgmcStatus::Panic
        }
    }
}

unsafe fn render(
    result: *const MgmcResult,
    out: *mut *mut c_char,
    f: impl Fn(&RunResult) -> mgmc::Result<String>,
) -> MgmcStatus {
    clear_error();
    if out.is_null() {
        set_error("out pointer is NULL".into());
        return MgmcStatus::InvalidArgument;
    }
    *out = ptr::null_mut();
    let Some(result) = result.as_ref() else {
        set_error("result handle is NULL".into());
        return MgmcStatus::InvalidArgument;
    };
    match catch_unwind(AssertUnwindSafe(|| f(&result.inner))) {
        Ok(Ok(text)) => {
            *out = to_owned_cstring(text);
            MgmcStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            classify(&e)
        }
        Err(_) => {
            set_error("panic while rendering result".into());
            MgmcStatus::Panic
        }
    }
}

/// Renders a result as pretty JSON into `*out` (caller frees with
/// [`mgmc_string_free`]).
///
/// # Safety
/// `result` must be NULL or a live handle from [`mgmc_run_json`]; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mgmc_result_to_json(
    result: *const MgmcResult,
    out: *mut *mut c_char,
) -> MgmcStatus {
    render(result, out, to_json_string)
}

/// Renders the flat CSV table of a result into `*out` (caller frees with
/// [`mgmc_string_free`]).
///
/// # Safety
/// Same contract as [`mgmc_result_to_json`].
#[no_mangle]
pub unsafe extern "C" fn mgmc_result_to_csv(
    result: *const MgmcResult,
    out: *mut *mut c_char,
) -> MgmcStatus {
    render(result, out, to_csv_string)
}

/// Releases a result handle. NULL is a no-op.
///
/// # Safety
/// `result` must be NULL or a handle from [`mgmc_run_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mgmc_result_free(result: *mut MgmcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Releases a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mgmc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
