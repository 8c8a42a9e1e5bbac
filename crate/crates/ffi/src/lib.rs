//! C ABI over the agentmesh pipeline.
//!
//! Handles are opaque and owned by the caller: every `*_new`/`am_run` result
//! must be released with the matching `*_free`. Strings returned by the
//! library are NUL-terminated UTF-8 and must be released with
//! [`am_string_free`]. Functions that can fail return an [`AmStatus`]; the
//! message for the most recent failure on the calling thread is available
//! from [`am_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use agentmesh::config::RunConfig;
use agentmesh::model::{RunReport, TaskStatus, UserRequest, Verdict};
use agentmesh::output::{report_json, write_outputs};
use agentmesh::pipeline::{run_pipeline, SetupError};
use agentmesh::planner::parse_plan;

/// Result codes shared by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Setup = 4,
    InvalidRequest = 5,
    OutOfRange = 6,
    Io = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmVerdict {
    Approved = 0,
    NeedsWork = 1,
    Unknown = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmTaskStatus {
    CleanPass = 0,
    Fixed = 1,
    NeedsAttention = 2,
    Skipped = 3,
}

/// Opaque run configuration.
pub struct AmConfig(RunConfig);

/// Opaque result of one run.
pub struct AmReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).ok());
}

fn fail(status: AmStatus, message: impl Into<String>) -> AmStatus {
    set_error(message);
    status
}

/// Runs `f`, turning a panic into [`AmStatus::Panic`].
fn guard(f: impl FnOnce() -> AmStatus) -> AmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(AmStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, AmStatus> {
    if ptr.is_null() {
        return Err(fail(AmStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(AmStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn into_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Message for the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn am_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// A configuration holding the defaults.
#[no_mangle]
pub extern "C" fn am_config_new() -> *mut AmConfig {
    Box::into_raw(Box::new(AmConfig(RunConfig::default())))
}

/// # Safety
/// `config` must be null or a pointer from [`am_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_config_free(config: *mut AmConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Layers a TOML file over `config`.
///
/// # Safety
/// `config` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn am_config_load_file(
    config: *mut AmConfig,
    path: *const c_char,
) -> AmStatus {
    guard(|| {
        let Some(config) = config.as_mut() else {
            return fail(AmStatus::NullArgument, "config is null");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match config.0.merge_file(Path::new(path)) {
            Ok(()) => AmStatus::Ok,
            Err(err) => fail(AmStatus::Config, err.to_string()),
        }
    })
}

/// Sets one key using the same names and syntax as the config file.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn am_config_set(
    config: *mut AmConfig,
    key: *const c_char,
    value: *const c_char,
) -> AmStatus {
    guard(|| {
        let Some(config) = config.as_mut() else {
            return fail(AmStatus::NullArgument, "config is null");
        };
        let (key, value) = match (str_arg(key, "key"), str_arg(value, "value")) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        match config.0.set(key, value) {
            Ok(()) => AmStatus::Ok,
            Err(err) => fail(AmStatus::Config, err.to_string()),
        }
    })
}

/// Runs the whole pipeline for `request`.
///
/// On [`AmStatus::Ok`], `*out_report` receives a report even if the run
/// aborted part way; inspect [`am_report_exit_code`]. Any other status means
/// no model call was made and `*out_report` is set to null.
///
/// # Safety
/// `config` must be a live handle, `request` a NUL-terminated string and
/// `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn am_run(
    config: *const AmConfig,
    request: *const c_char,
    out_report: *mut *mut AmReport,
) -> AmStatus {
    guard(|| {
        if out_report.is_null() {
            return fail(AmStatus::NullArgument, "out_report is null");
        }
        *out_report = ptr::null_mut();
        let Some(config) = config.as_ref() else {
            return fail(AmStatus::NullArgument, "config is null");
        };
        let request = match str_arg(request, "request") {
            Ok(r) => r,
            Err(status) => return status,
        };
        let request = match UserRequest::new(request) {
            Ok(r) => r,
            Err(err) => return fail(AmStatus::InvalidRequest, err.to_string()),
        };
        match run_pipeline(&request, config.0.clone()) {
            Ok(report) => {
                *out_report = Box::into_raw(Box::new(AmReport(report)));
                AmStatus::Ok
            }
            Err(err @ SetupError::Config(_)) => fail(AmStatus::Config, err.to_string()),
            Err(err) => fail(AmStatus::Setup, err.to_string()),
        }
    })
}

/// # Safety
/// `report` must be null or a pointer from [`am_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_report_free(report: *mut AmReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Process exit code the CLI would use: 0, 1 or 2. Returns -1 for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn am_report_exit_code(report: *const AmReport) -> i32 {
    report.as_ref().map_or(-1, |r| r.0.exit_code())
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn am_report_verdict(report: *const AmReport) -> AmVerdict {
    match report.as_ref().map(|r| r.0.verdict()) {
        Some(Verdict::Approved) => AmVerdict::Approved,
        Some(Verdict::NeedsWork) => AmVerdict::NeedsWork,
        Some(Verdict::Unknown) | None => AmVerdict::Unknown,
    }
}

/// Number of planned tasks; 0 when planning never finished.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn am_report_task_count(report: *const AmReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.statuses.len())
}

/// Status of the task at zero-based `index`.
///
/// # Safety
/// `report` must be a live handle and `out_status` writable.
#[no_mangle]
pub unsafe extern "C" fn am_report_task_status(
    report: *const AmReport,
    index: usize,
    out_status: *mut AmTaskStatus,
) -> AmStatus {
    guard(|| {
        let Some(report) = report.as_ref() else {
            return fail(AmStatus::NullArgument, "report is null");
        };
        if out_status.is_null() {
            return fail(AmStatus::NullArgument, "out_status is null");
        }
        let Some(outcome) = report.0.statuses.get(index) else {
            return fail(
                AmStatus::OutOfRange,
                format!(
                    "task {index} out of range ({} tasks)",
                    report.0.statuses.len()
                ),
            );
        };
        *out_status = match outcome.status {
            TaskStatus::CleanPass => AmTaskStatus::CleanPass,
            TaskStatus::Fixed { .. } => AmTaskStatus::Fixed,
            TaskStatus::NeedsAttention { .. } => AmTaskStatus::NeedsAttention,
            TaskStatus::Skipped { .. } => AmTaskStatus::Skipped,
        };
        AmStatus::Ok
    })
}

/// Writes source files, plan, review, transcript and report into `out_dir`.
///
/// # Safety
/// `report` must be a live handle; `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn am_report_write_outputs(
    report: *const AmReport,
    out_dir: *const c_char,
) -> AmStatus {
    guard(|| {
        let Some(report) = report.as_ref() else {
            return fail(AmStatus::NullArgument, "report is null");
        };
        let out_dir = match str_arg(out_dir, "out_dir") {
            Ok(d) => d,
            Err(status) => return status,
        };
        match write_outputs(&report.0, Path::new(out_dir)) {
            Ok(()) => AmStatus::Ok,
            Err(err) => fail(AmStatus::Io, format!("{out_dir}: {err}")),
        }
    })
}

/// The run summary as JSON (the same document as `report.json`), or null.
///
/// # Safety
/// `report` must be null or a live handle. Free the result with
/// [`am_string_free`].
#[no_mangle]
pub unsafe extern "C" fn am_report_to_json(report: *const AmReport) -> *mut c_char {
    let Some(report) = report.as_ref() else {
        set_error("report is null");
        return ptr::null_mut();
    };
    catch_unwind(AssertUnwindSafe(|| {
        into_c_string(report_json(&report.0).to_string())
    }))
    .unwrap_or_else(|_| {
        set_error("internal panic");
        ptr::null_mut()
    })
}

/// Parses planner output into a JSON array of `{index, title, detail}`.
///
/// Returns null when the text is not a valid plan; the reason is available
/// from [`am_last_error_message`].
///
/// # Safety
/// `text` must be null or a NUL-terminated string. Free the result with
/// [`am_string_free`].
#[no_mangle]
pub unsafe extern "C" fn am_parse_plan_json(text: *const c_char) -> *mut c_char {
    let text = match str_arg(text, "text") {
        Ok(t) => t,
        Err(_) => return ptr::null_mut(),
    };
    let parsed = catch_unwind(|| parse_plan(text).map(|plan| serde_json::to_string(plan.tasks())));
    match parsed {
        Ok(Ok(Ok(json))) => into_c_string(json),
        Ok(Ok(Err(err))) => {
            set_error(err.to_string());
            ptr::null_mut()
        }
        Ok(Err(err)) => {
            set_error(err.to_string());
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
