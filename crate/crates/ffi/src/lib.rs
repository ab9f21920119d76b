//! C ABI over `algebroid-mech`.
//!
//! Every entry point returns an [`AlgebroidStatus`]; on failure a
//! human-readable message is kept per thread and can be read with
//! [`algebroid_last_error`]. Objects cross the boundary as opaque handles
//! that the caller releases with the matching `*_free` function. Panics
//! never unwind into C: they are caught and reported as
//! `ALGEBROID_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use algebroid_mech::cli::{cmd_check, cmd_simulate, cmd_variation_test, BuiltSystem, SystemSpec, DEFAULT_PROBES};
use algebroid_mech::scenarios::builtin;
use algebroid_mech::{Error, IntegratorConfig, Trajectory};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgebroidStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed spec, unknown name, dimension mismatch, bad grid.
    InputError = 3,
    /// Singular Hessian or saddle, constraint drift, divergence.
    NumericError = 4,
    /// An index was out of range or an output buffer too small.
    OutOfRange = 5,
    /// An expectation or gated identity did not hold.
    CheckFailed = 6,
    /// Internal panic (a bug); the message holds the payload.
    Panic = 7,
}

/// A resolved system: chart, Lagrangian, constraint, initial state and
/// integrator settings.
pub struct AlgebroidSystem {
    spec: SystemSpec,
    built: BuiltSystem,
}

/// A sampled trajectory with fiber points in full coordinates.
pub struct AlgebroidTrajectory {
    traj: Trajectory,
}

/// Axiom residuals of a chart at random sample points.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlgebroidAxiomReport {
    pub skew_residual: f64,
    pub rho_sigma_residual: f64,
    pub jacobiator_residual: f64,
    pub anchor_hom_residual: f64,
    pub is_quasi_lie: bool,
    pub is_lie: bool,
    pub samples_used: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(AlgebroidStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_numeric() { AlgebroidStatus::NumericError } else { AlgebroidStatus::InputError };
        Failure(status, e.to_string())
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AlgebroidStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AlgebroidStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
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
            AlgebroidStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AlgebroidStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(AlgebroidStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn into_system(spec: SystemSpec) -> Result<*mut AlgebroidSystem, Failure> {
    let built = spec.build()?;
    Ok(Box::into_raw(Box::new(AlgebroidSystem { spec, built })))
}

/// Message of the last failed call on this thread, or NULL if the last
/// call succeeded. The pointer stays valid until the next call into this
/// library from the same thread.
#[no_mangle]
pub extern "C" fn algebroid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn algebroid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a system from a JSON spec (same format as the command-line tool).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn algebroid_system_from_json(json: *const c_char, out: *mut *mut AlgebroidSystem) -> AlgebroidStatus {
    guard(|| {
        let text = string(json, "json")?;
        let spec = SystemSpec::from_json(text)?;
        write_out(out, into_system(spec)?, "out")
    })
}

/// Build a named built-in scenario with default parameters and the given
/// step size (`h <= 0` picks the largest step ≤ 1e-3 dividing the interval).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn algebroid_system_from_scenario(
    name: *const c_char,
    h: f64,
    out: *mut *mut AlgebroidSystem,
) -> AlgebroidStatus {
    guard(|| {
        let name = string(name, "name")?;
        let sc = builtin(name, &Default::default())?;
        let span = sc.t1 - sc.initial.t;
        let d = IntegratorConfig::default();
        let h = if h > 0.0 { h } else { span / (span / d.h).ceil() };
        let integ = algebroid_mech::cli::IntegratorSpec {
            h,
            t1: sc.t1,
            cond_max: d.cond_max,
            drift_tol: d.drift_tol,
            project_every: d.project_every,
        };
        write_out(out, into_system(SystemSpec::from_scenario(&sc, &integ))?, "out")
    })
}

/// Release a system. Passing NULL is a no-op.
///
/// # Safety
/// `sys` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn algebroid_system_free(sys: *mut AlgebroidSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Base dimension `n`, fiber rank `m` and number of constraint multipliers
/// `k` (0 unless the system is vakonomic or nonholonomic).
///
/// # Safety
/// `sys` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn algebroid_system_dims(
    sys: *const AlgebroidSystem,
    n: *mut usize,
    m: *mut usize,
    k: *mut usize,
) -> AlgebroidStatus {
    guard(|| {
        let s = borrow(sys, "sys")?;
        let kk = match &s.built.constraint {
            Some(algebroid_mech::scenarios::ScenarioConstraint::Geometric(c)) => c.k(),
            _ => 0,
        };
        write_out(n, s.built.chart.n(), "n")?;
        write_out(m, s.built.chart.m(), "m")?;
        write_out(k, kk, "k")
    })
}

/// Classify the chart at seeded random points.
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn algebroid_system_check(
    sys: *const AlgebroidSystem,
    seed: u64,
    out: *mut AlgebroidAxiomReport,
) -> AlgebroidStatus {
    guard(|| {
        let s = borrow(sys, "sys")?;
        let rep = cmd_check(&s.spec, seed)?.axiom;
        let r = AlgebroidAxiomReport {
            skew_residual: rep.skew_residual,
            rho_sigma_residual: rep.rho_sigma_residual,
            jacobiator_residual: rep.jacobiator_residual,
            anchor_hom_residual: rep.anchor_hom_residual,
            is_quasi_lie: rep.is_quasi_lie,
            is_lie: rep.is_lie,
            samples_used: rep.samples_used,
        };
        write_out(out, r, "out")
    })
}

/// Integrate the system from its initial state to its end time.
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn algebroid_system_simulate(
    sys: *const AlgebroidSystem,
    out: *mut *mut AlgebroidTrajectory,
) -> AlgebroidStatus {
    guard(|| {
        let s = borrow(sys, "sys")?;
        let traj = s.built.integrate()?;
        let traj = algebroid_mech::cli::full_trajectory(&s.built, &traj)?;
        write_out(out, Box::into_raw(Box::new(AlgebroidTrajectory { traj })), "out")
    })
}

/// Run the mode-appropriate variational identities and return the JSON
/// report (free with [`algebroid_string_free`]). Returns
/// `ALGEBROID_STATUS_CHECK_FAILED` — with the report still written — when
/// a gated identity or the declared class does not hold. `probes == 0`
/// selects the default count.
///
/// # Safety
/// `sys` must be a live handle; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn algebroid_system_variation_test(
    sys: *const AlgebroidSystem,
    probes: usize,
    seed: u64,
    report_json: *mut *mut c_char,
) -> AlgebroidStatus {
    let mut passed = true;
    let status = guard(|| {
        let s = borrow(sys, "sys")?;
        let probes = if probes == 0 { DEFAULT_PROBES } else { probes };
        let rep = cmd_variation_test(&s.spec, probes, seed)?;
        passed = rep.passed();
        let text = serde_json::to_string(&rep).map_err(|e| Failure(AlgebroidStatus::Panic, e.to_string()))?;
        let c = CString::new(text).map_err(|e| Failure(AlgebroidStatus::Panic, e.to_string()))?;
        write_out(report_json, c.into_raw(), "report_json")
    });
    if status == AlgebroidStatus::Ok && !passed {
        set_error("a gated identity or the declared class did not hold; see the report".into());
        return AlgebroidStatus::CheckFailed;
    }
    status
}

/// Release a string returned by this library. Passing NULL is a no-op.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn algebroid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of samples (steps + 1).
///
/// # Safety
/// `traj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn algebroid_trajectory_len(traj: *const AlgebroidTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.len())
}

/// Values per row: `1 + n + m + k` (time, base, fiber, multipliers), the
/// same layout as the CSV columns.
///
/// # Safety
/// `traj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn algebroid_trajectory_row_width(traj: *const AlgebroidTrajectory) -> usize {
    traj.as_ref().and_then(|t| t.traj.states.first()).map_or(0, |s| 1 + s.x.len() + s.y.len() + s.mu.len())
}

/// Copy row `index` into `out[0..len]`.
///
/// # Safety
/// `traj` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn algebroid_trajectory_row(
    traj: *const AlgebroidTrajectory,
    index: usize,
    out: *mut f64,
    len: usize,
) -> AlgebroidStatus {
    guard(|| {
        let t = borrow(traj, "traj")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = t.traj.states.get(index).ok_or_else(|| {
            Failure(AlgebroidStatus::OutOfRange, format!("row {index} out of range (len {})", t.traj.len()))
        })?;
        let row: Vec<f64> = std::iter::once(s.t).chain(s.x.iter().copied()).chain(s.y.iter().copied()).chain(s.mu.iter().copied()).collect();
        if len < row.len() {
            return Err(Failure(AlgebroidStatus::OutOfRange, format!("buffer holds {len} values, row needs {}", row.len())));
        }
        std::slice::from_raw_parts_mut(out, row.len()).copy_from_slice(&row);
        Ok(())
    })
}

/// Write the trajectory as CSV.
///
/// # Safety
/// `traj` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn algebroid_trajectory_write_csv(traj: *const AlgebroidTrajectory, path: *const c_char) -> AlgebroidStatus {
    guard(|| {
        let t = borrow(traj, "traj")?;
        let p = string(path, "path")?;
        t.traj.write_csv_file(Path::new(p))?;
        Ok(())
    })
}

/// Release a trajectory. Passing NULL is a no-op.
///
/// # Safety
/// `traj` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn algebroid_trajectory_free(traj: *mut AlgebroidTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// One-shot simulation: spec JSON in, JSON report out (trajectory
/// discarded). Free the report with [`algebroid_string_free`].
///
/// # Safety
/// `json` must be a NUL-terminated string; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn algebroid_simulate_json(json: *const c_char, seed: u64, report_json: *mut *mut c_char) -> AlgebroidStatus {
    guard(|| {
        let spec = SystemSpec::from_json(string(json, "json")?)?;
        let (rep, _) = cmd_simulate(&spec, seed)?;
        let text = serde_json::to_string(&rep).map_err(|e| Failure(AlgebroidStatus::Panic, e.to_string()))?;
        let c = CString::new(text).map_err(|e| Failure(AlgebroidStatus::Panic, e.to_string()))?;
        write_out(report_json, c.into_raw(), "report_json")
    })
}
