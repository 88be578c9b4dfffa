//! C ABI for the equilex pipeline.
//!
//! Conventions:
//! - every function is panic-safe and returns an `EquilexStatus` (or a plain
//!   value with a documented sentinel for the degenerate cases);
//! - `EquilexBuild` is an opaque handle; it is produced whenever the config
//!   parses, even if the construction itself failed, so the error report
//!   stays reachable through `equilex_build_report_json`;
//! - strings returned as `*mut c_char` are owned by the caller and must be
//!   released with `equilex_string_free`; `equilex_last_error` stays owned by
//!   the library and is valid until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use equilex::builder::build_set;
use equilex::report::{render_report, verify_report};
use equilex::{EquilateralSet, Error, RunConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EquilexStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    Config = 4,
    NotUniformlySmooth = 5,
    NonSmoothPoint = 6,
    NonStabilizing = 7,
    TailOutOfRange = 8,
    LambdaTooSmall = 9,
    RootBracketing = 10,
    DivisionGuard = 11,
    SingularMatrix = 12,
    GuardFailed = 13,
    NoConvergence = 14,
    LeftDomain = 15,
    ExhaustedPool = 16,
    InvariantViolation = 17,
    FinalDefect = 18,
    DimensionMismatch = 19,
    NonFinite = 20,
    ZeroVector = 21,
    Report = 22,
    Io = 23,
    VerifyFailed = 24,
    Panic = 25,
}

pub struct EquilexBuild {
    config: RunConfig,
    set: Option<EquilateralSet>,
    report: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn status_of(err: &Error) -> EquilexStatus {
    match err {
        Error::DimensionMismatch { .. } => EquilexStatus::DimensionMismatch,
        Error::NonFinite { .. } => EquilexStatus::NonFinite,
        Error::ZeroVector => EquilexStatus::ZeroVector,
        Error::InvalidParameter(_) => EquilexStatus::InvalidParameter,
        Error::NotUniformlySmooth { .. } => EquilexStatus::NotUniformlySmooth,
        Error::NonSmoothPoint { .. } => EquilexStatus::NonSmoothPoint,
        Error::NonStabilizing { .. } => EquilexStatus::NonStabilizing,
        Error::TailOutOfRange { .. } => EquilexStatus::TailOutOfRange,
        Error::LambdaTooSmall { .. } => EquilexStatus::LambdaTooSmall,
        Error::RootBracketing { .. } => EquilexStatus::RootBracketing,
        Error::DivisionGuard { .. } => EquilexStatus::DivisionGuard,
        Error::SingularMatrix { .. } => EquilexStatus::SingularMatrix,
        Error::GuardFailed { .. } => EquilexStatus::GuardFailed,
        Error::NoConvergence { .. } => EquilexStatus::NoConvergence,
        Error::LeftDomain { .. } => EquilexStatus::LeftDomain,
        Error::ExhaustedPool { .. } => EquilexStatus::ExhaustedPool,
        Error::InvariantViolation { .. } => EquilexStatus::InvariantViolation,
        Error::FinalDefect { .. } => EquilexStatus::FinalDefect,
        Error::Config(_) => EquilexStatus::Config,
        Error::Report(_) => EquilexStatus::Report,
        Error::Io(_) => EquilexStatus::Io,
    }
}

fn fail(err: &Error) -> EquilexStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn guarded(f: impl FnOnce() -> EquilexStatus) -> EquilexStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_last_error("internal panic crossed the FFI boundary");
        EquilexStatus::Panic
    })
}

/// Reads a required C-string argument; `Err` is the status to return.
unsafe fn cstr_arg<'a>(
    ptr: *const c_char,
    what: &str,
) -> std::result::Result<&'a str, EquilexStatus> {
    if ptr.is_null() {
        set_last_error(&format!("{what} is null"));
        return Err(EquilexStatus::NullArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_last_error(&format!("{what} is not valid UTF-8"));
            Err(EquilexStatus::InvalidUtf8)
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn equilex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread (empty until one
/// occurs). Owned by the library; do not free.
#[no_mangle]
pub extern "C" fn equilex_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Short identifier for a status code, e.g. "guard_failed".
#[no_mangle]
pub extern "C" fn equilex_status_name(status: EquilexStatus) -> *const c_char {
    let name: &'static str = match status {
        EquilexStatus::Ok => "ok\0",
        EquilexStatus::NullArgument => "null_argument\0",
        EquilexStatus::InvalidUtf8 => "invalid_utf8\0",
        EquilexStatus::InvalidParameter => "invalid_parameter\0",
        EquilexStatus::Config => "config\0",
        EquilexStatus::NotUniformlySmooth => "not_uniformly_smooth\0",
        EquilexStatus::NonSmoothPoint => "non_smooth_point\0",
        EquilexStatus::NonStabilizing => "non_stabilizing\0",
        EquilexStatus::TailOutOfRange => "tail_out_of_range\0",
        EquilexStatus::LambdaTooSmall => "lambda_too_small\0",
        EquilexStatus::RootBracketing => "root_bracketing\0",
        EquilexStatus::DivisionGuard => "division_guard\0",
        EquilexStatus::SingularMatrix => "singular_matrix\0",
        EquilexStatus::GuardFailed => "guard_failed\0",
        EquilexStatus::NoConvergence => "no_convergence\0",
        EquilexStatus::LeftDomain => "left_domain\0",
        EquilexStatus::ExhaustedPool => "exhausted_pool\0",
        EquilexStatus::InvariantViolation => "invariant_violation\0",
        EquilexStatus::FinalDefect => "final_defect\0",
        EquilexStatus::DimensionMismatch => "dimension_mismatch\0",
        EquilexStatus::NonFinite => "non_finite\0",
        EquilexStatus::ZeroVector => "zero_vector\0",
        EquilexStatus::Report => "report\0",
        EquilexStatus::Io => "io\0",
        EquilexStatus::VerifyFailed => "verify_failed\0",
        EquilexStatus::Panic => "panic\0",
    };
    name.as_ptr() as *const c_char
}

/// Parses a TOML config and runs the construction.
///
/// On any status other than a config/argument failure, `*out` receives a
/// handle (release with `equilex_build_free`); when the construction failed
/// the handle still carries the error report. `*out` is null only when the
/// config itself was rejected.
///
/// # Safety
///
/// `config_toml` must be null or a NUL-terminated string; `out` must be null
/// or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn equilex_build(
    config_toml: *const c_char,
    out: *mut *mut EquilexBuild,
) -> EquilexStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("out handle pointer is null");
            return EquilexStatus::NullArgument;
        }
        unsafe { *out = ptr::null_mut() };
        let text = match unsafe { cstr_arg(config_toml, "config") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let config = match RunConfig::parse(text) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let source = match config.source() {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let oracle = match config.oracle() {
            Ok(o) => o,
            Err(e) => return fail(&e),
        };
        let outcome = build_set(&source, &oracle, &config.policy, &config.params);
        let report = render_report(&config, &outcome);
        let (status, set) = match outcome {
            Ok(set) => (EquilexStatus::Ok, Some(set)),
            Err(e) => (fail(&e), None),
        };
        let handle = Box::new(EquilexBuild {
            config,
            set,
            report,
        });
        unsafe { *out = Box::into_raw(handle) };
        status
    })
}

/// Releases a build handle. Null is a no-op.
///
/// # Safety
///
/// `handle` must be null or a pointer obtained from `equilex_build` that has
/// not been freed yet; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_free(handle: *mut EquilexBuild) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Number of constructed points; 0 for a null or failed handle.
///
/// # Safety
///
/// `handle` must be null or a live pointer from `equilex_build`.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_n_points(handle: *const EquilexBuild) -> usize {
    match unsafe { handle.as_ref() } {
        Some(h) => h.set.as_ref().map_or(0, |s| s.points.len()),
        None => 0,
    }
}

/// Ambient dimension of the configured space; 0 for a null handle.
///
/// # Safety
///
/// `handle` must be null or a live pointer from `equilex_build`.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_dim(handle: *const EquilexBuild) -> usize {
    match unsafe { handle.as_ref() } {
        Some(h) => h.config.dim,
        None => 0,
    }
}

fn set_scalar(handle: *const EquilexBuild, get: impl Fn(&EquilateralSet) -> f64) -> f64 {
    let result = catch_unwind(AssertUnwindSafe(|| match unsafe { handle.as_ref() } {
        Some(h) => h.set.as_ref().map_or(f64::NAN, get),
        None => f64::NAN,
    }));
    result.unwrap_or(f64::NAN)
}

/// Common pairwise distance; NaN for a null or failed handle.
///
/// # Safety
///
/// `handle` must be null or a live pointer from `equilex_build`.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_lambda(handle: *const EquilexBuild) -> f64 {
    set_scalar(handle, |s| s.lambda)
}

/// Worst pairwise deviation from lambda; NaN for a null or failed handle.
///
/// # Safety
///
/// `handle` must be null or a live pointer from `equilex_build`.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_defect(handle: *const EquilexBuild) -> f64 {
    set_scalar(handle, |s| s.defect)
}

/// Diagonal floor constant of the matrix gate; NaN for a null or failed
/// handle.
///
/// # Safety
///
/// `handle` must be null or a live pointer from `equilex_build`.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_constant_c(handle: *const EquilexBuild) -> f64 {
    set_scalar(handle, |s| s.c)
}

/// Copies the coordinates of point `index` (0-based) into `out[0..len]`;
/// `len` must equal the ambient dimension.
///
/// # Safety
///
/// `handle` must be null or a live pointer from `equilex_build`; `out` must
/// be null or point to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_point(
    handle: *const EquilexBuild,
    index: usize,
    out: *mut f64,
    len: usize,
) -> EquilexStatus {
    guarded(|| {
        let Some(h) = (unsafe { handle.as_ref() }) else {
            set_last_error("build handle is null");
            return EquilexStatus::NullArgument;
        };
        if out.is_null() {
            set_last_error("output buffer is null");
            return EquilexStatus::NullArgument;
        }
        let Some(set) = h.set.as_ref() else {
            set_last_error("construction failed; no points available");
            return EquilexStatus::InvalidParameter;
        };
        let Some(point) = set.points.get(index) else {
            set_last_error(&format!(
                "point index {index} out of range (have {})",
                set.points.len()
            ));
            return EquilexStatus::InvalidParameter;
        };
        if len != point.dim() {
            set_last_error(&format!(
                "buffer length {len} does not match dimension {}",
                point.dim()
            ));
            return EquilexStatus::DimensionMismatch;
        }
        unsafe { ptr::copy_nonoverlapping(point.coords().as_ptr(), out, len) };
        EquilexStatus::Ok
    })
}

/// JSON report for the build (success or error report). Returns an owned
/// string (release with `equilex_string_free`), or null for a null handle.
///
/// # Safety
///
/// `handle` must be null or a live pointer from `equilex_build`.
#[no_mangle]
pub unsafe extern "C" fn equilex_build_report_json(handle: *const EquilexBuild) -> *mut c_char {
    match unsafe { handle.as_ref() } {
        Some(h) => CString::new(h.report.as_str())
            .map(CString::into_raw)
            .unwrap_or(ptr::null_mut()),
        None => ptr::null_mut(),
    }
}

/// Releases a string previously returned by this library. Null is a no-op.
///
/// # Safety
///
/// `s` must be null or a string returned by this library that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn equilex_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Recomputes all pairwise distances of a JSON report with an independent
/// norm and compares them against the reported lambda. `defect_out` (optional)
/// receives the recomputed defect. Returns `Ok` when the report checks out,
/// `VerifyFailed` when it does not, and a parse status when it is malformed.
///
/// # Safety
///
/// `report_json` must be null or a NUL-terminated string; `defect_out` must
/// be null or point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn equilex_verify(
    report_json: *const c_char,
    tol: f64,
    defect_out: *mut f64,
) -> EquilexStatus {
    guarded(|| {
        let text = match unsafe { cstr_arg(report_json, "report") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        if !(tol > 0.0 && tol.is_finite()) {
            set_last_error(&format!("tolerance {tol} must be positive and finite"));
            return EquilexStatus::InvalidParameter;
        }
        match verify_report(text, tol) {
            Ok(outcome) => {
                if !defect_out.is_null() {
                    unsafe { *defect_out = outcome.defect };
                }
                if outcome.ok {
                    EquilexStatus::Ok
                } else {
                    set_last_error(&format!(
                        "recomputed defect {:e} exceeds tolerance {tol:e}",
                        outcome.defect
                    ));
                    EquilexStatus::VerifyFailed
                }
            }
            Err(e) => fail(&e),
        }
    })
}
