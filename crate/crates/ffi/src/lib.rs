//! C ABI for the alveoli solvers.
//!
//! Scenarios and runs are opaque handles created and released through this
//! interface. Every fallible function returns an [`AlvStatus`]; on failure a
//! description is available from [`alv_last_error`] on the same thread until
//! the next failing call. No panic crosses the boundary: it is reported as
//! [`AlvStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use alveoli::scenario::Scenario;
use alveoli::study::{solve, Solver};
use alveoli::transient::TransientRun;
use alveoli::Error;

/// Result codes. The configuration and solver codes match the command-line
/// exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlvStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// The scenario is malformed or inconsistent.
    Config = 2,
    /// A solver failed (assembly, linear solve, non-finite values).
    Solver = 3,
    /// An argument is out of range (snapshot index, buffer length, solver).
    InvalidArgument = 4,
    /// A string argument is not valid UTF-8.
    Utf8 = 5,
    /// An internal error was caught at the boundary.
    Panic = 6,
}

/// Solver selector for [`alv_solve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlvSolver {
    Micro = 0,
    Limit = 1,
    Outer = 2,
    Corrector = 3,
}

fn solver_from_code(code: u32) -> Result<Solver, Failure> {
    Ok(match code {
        c if c == AlvSolver::Micro as u32 => Solver::Micro,
        c if c == AlvSolver::Limit as u32 => Solver::Limit,
        c if c == AlvSolver::Outer as u32 => Solver::Outer,
        c if c == AlvSolver::Corrector as u32 => Solver::Corrector,
        c => return Err(invalid(format!("unknown solver code {c}"))),
    })
}

/// A validated scenario.
pub struct AlvScenario(Scenario);

/// The snapshots and diagnostics of one transient solve.
pub struct AlvRun(TransientRun);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AlvStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config() {
            AlvStatus::Config
        } else {
            AlvStatus::Solver
        };
        Failure(code, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(AlvStatus::InvalidArgument, message.into())
}

/// Runs `f`, converting failures and panics into a status and the
/// thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AlvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AlvStatus::Ok,
        Ok(Err(Failure(code, message))) => {
            set_error(message);
            code
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal error".into());
            set_error(format!("panic: {message}"));
            AlvStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(AlvStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `s` must be null or a valid nul-terminated string.
unsafe fn read_str<'a>(s: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(s, name)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Failure(AlvStatus::Utf8, format!("{name}: {e}")))
}

/// # Safety
/// `p` must be null or point to a live handle.
unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    non_null(p, name)?;
    Ok(&*p)
}

fn boxed<T>(value: T, out: *mut *mut T) {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message of the last failure on this thread, or null if none occurred.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn alv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn alv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a scenario from TOML text.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alv_scenario_parse(toml: *const c_char, out: *mut *mut AlvScenario) -> AlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = read_str(toml, "toml")?;
        boxed(AlvScenario(Scenario::parse(text)?), out);
        Ok(())
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alv_scenario_load(path: *const c_char, out: *mut *mut AlvScenario) -> AlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = read_str(path, "path")?;
        boxed(AlvScenario(Scenario::load(Path::new(path))?), out);
        Ok(())
    })
}

/// Replaces the period ε, keeping everything else.
///
/// # Safety
/// `scenario` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn alv_scenario_set_eps(scenario: *mut AlvScenario, eps: f64) -> AlvStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        let s = &mut *scenario;
        s.0 = s.0.with_eps(eps)?;
        Ok(())
    })
}

/// Current period ε of the scenario (NaN for a null handle).
///
/// # Safety
/// `scenario` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn alv_scenario_eps(scenario: *const AlvScenario) -> f64 {
    scenario.as_ref().map_or(f64::NAN, |s| s.0.geometry.eps)
}

/// The scenario with all defaults filled in, as TOML. Release the string
/// with [`alv_string_free`].
///
/// # Safety
/// `scenario` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alv_scenario_echo(scenario: *const AlvScenario, out: *mut *mut c_char) -> AlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = handle(scenario, "scenario")?;
        let text = CString::new(s.0.echo()).map_err(|e| invalid(e.to_string()))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// Releases a scenario handle. Null is ignored.
///
/// # Safety
/// `scenario` must be null or a handle not yet released.
#[no_mangle]
pub unsafe extern "C" fn alv_scenario_free(scenario: *mut AlvScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet released.
#[no_mangle]
pub unsafe extern "C" fn alv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs one transient solver on the scenario; `solver` is an [`AlvSolver`]
/// value.
///
/// # Safety
/// `scenario` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alv_solve(scenario: *const AlvScenario, solver: u32, out: *mut *mut AlvRun) -> AlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = handle(scenario, "scenario")?;
        let solver = solver_from_code(solver)?;
        boxed(AlvRun(solve(&s.0, solver)?), out);
        Ok(())
    })
}

/// Releases a run handle. Null is ignored.
///
/// # Safety
/// `run` must be null or a handle not yet released.
#[no_mangle]
pub unsafe extern "C" fn alv_run_free(run: *mut AlvRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of stored snapshots, including the initial one (0 for null).
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn alv_run_snapshot_count(run: *const AlvRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.series.len())
}

/// Number of grid cells per snapshot (0 for null).
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn alv_run_cell_count(run: *const AlvRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.series.grid.len())
}

/// Time of snapshot `k`.
///
/// # Safety
/// `run` must be a live run handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alv_run_time(run: *const AlvRun, k: usize, out: *mut f64) -> AlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let r = handle(run, "run")?;
        let t =
            r.0.series
                .times
                .get(k)
                .ok_or_else(|| invalid(format!("snapshot {k} out of range")))?;
        *out = *t;
        Ok(())
    })
}

/// Copies the cell values of snapshot `k` into `buffer`, which must hold
/// exactly [`alv_run_cell_count`] values (axis 0 fastest, solid cells 0).
///
/// # Safety
/// `run` must be a live run handle and `buffer` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn alv_run_field(run: *const AlvRun, k: usize, buffer: *mut f64, len: usize) -> AlvStatus {
    guard(|| {
        non_null(buffer, "buffer")?;
        let r = handle(run, "run")?;
        let values =
            r.0.series
                .values
                .get(k)
                .ok_or_else(|| invalid(format!("snapshot {k} out of range")))?;
        if len != values.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, the grid has {}",
                values.len()
            )));
        }
        std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(values);
        Ok(())
    })
}

/// Scalar diagnostics of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AlvRunSummary {
    pub steps: usize,
    pub max_abs: f64,
    /// `‖∇φ‖_{L²(0,T;L²)}`.
    pub energy_norm: f64,
    /// Total influx through the holes.
    pub total_injected: f64,
    /// Worst per-step relative mass-balance residual.
    pub worst_balance: f64,
    /// Relative residual of the discrete energy identity.
    pub energy_residual: f64,
}

/// Fills `out` with the run's diagnostics.
///
/// # Safety
/// `run` must be a live run handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alv_run_summary(run: *const AlvRun, out: *mut AlvRunSummary) -> AlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let r = &handle(run, "run")?.0.report;
        *out = AlvRunSummary {
            steps: r.steps.len().saturating_sub(1),
            max_abs: r.max_abs,
            energy_norm: r.h1_time_sq.sqrt(),
            total_injected: r.total_injected,
            worst_balance: r.worst_balance,
            energy_residual: r.energy.relative_residual,
        };
        Ok(())
    })
}
