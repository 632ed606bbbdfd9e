//! C ABI over the experiment harness and a put-style obstacle solver.
//!
//! Every function returns an [`ObbStatus`]. On failure the message is kept in
//! a thread-local slot readable through [`obb_last_error`]. Handles are
//! opaque and released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use obstacle_bsde::engine::LatticeEngine;
use obstacle_bsde::experiment::{self, ExperimentConfig, Outcome};
use obstacle_bsde::forward::{build_lattice, LatticeBox};
use obstacle_bsde::grid::TimeGrid;
use obstacle_bsde::model::{DiffusionSpec, DriverSpec, ScalarFn};
use obstacle_bsde::pde::{solve_obstacle_projected, SpaceTimeGrid};
use obstacle_bsde::rbsde::{
    decompose_obstacle, obstacle_increments, solve_rbsde_homographic, solve_rbsde_penalized, solve_rbsde_projected,
};
use obstacle_bsde::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Configuration text or key could not be parsed.
    Config = 3,
    /// Inputs parse but violate a precondition (CFL, ellipticity, ranges).
    Validation = 4,
    /// A solver failed (non-contraction, root finder, monotonicity, Newton).
    Solver = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObbMethod {
    /// Reflected solution on the lattice by projection.
    Projected = 0,
    /// Penalized solution at level `n`.
    Penalized = 1,
    /// Homographic approximation at level `n`.
    Homographic = 2,
    /// Finite-difference obstacle problem.
    Pde = 3,
}

/// Put-style obstacle problem: `a = sigma2`, `b = 0`, `f(y) = −rate·y`,
/// `φ = h = (strike − x)⁺`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ObbPutParams {
    pub sigma2: f64,
    pub rate: f64,
    pub strike: f64,
    pub x0: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub dx: f64,
    pub half_width: f64,
}

pub struct ObbConfig(ExperimentConfig);

pub struct ObbOutcome {
    inner: Outcome,
    names: Vec<CString>,
    summary: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn classify(e: &Error) -> ObbStatus {
    match e {
        Error::Config { .. } => ObbStatus::Config,
        Error::Cfl { .. }
        | Error::Peclet { .. }
        | Error::Invalid(_)
        | Error::Mismatch(_)
        | Error::Decomposition { .. }
        | Error::EmptyGrid
        | Error::NegativeDensity { .. } => ObbStatus::Validation,
        Error::Io(_) => ObbStatus::Io,
        _ => ObbStatus::Solver,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ObbStatus, String)>) -> ObbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ObbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside obstacle-bsde");
            ObbStatus::Panic
        }
    }
}

fn lift(e: Error) -> (ObbStatus, String) {
    (classify(&e), e.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ObbStatus, String)> {
    if p.is_null() {
        return Err((ObbStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (ObbStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), (ObbStatus, String)> {
    if p.is_null() {
        Err((ObbStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn obb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn obb_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn obb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn obb_config_parse(toml: *const c_char, out: *mut *mut ObbConfig) -> ObbStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = experiment::parse_config(text(toml, "toml")?).map_err(lift)?;
        *out = Box::into_raw(Box::new(ObbConfig(cfg)));
        Ok(())
    })
}

/// Defaults of a built-in case.
///
/// # Safety
/// `case_name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn obb_config_default(case_name: *const c_char, out: *mut *mut ObbConfig) -> ObbStatus {
    guard(|| {
        non_null(out, "out")?;
        let name = text(case_name, "case_name")?;
        let cfg = experiment::default_config(name).ok_or((ObbStatus::Config, format!("unknown case '{name}'")))?;
        *out = Box::into_raw(Box::new(ObbConfig(cfg)));
        Ok(())
    })
}

/// Replaces one dotted key, e.g. `grid.n_steps`, with a TOML value.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn obb_config_set(cfg: *mut ObbConfig, key: *const c_char, value: *const c_char) -> ObbStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        let next = experiment::with_override(&(*cfg).0, text(key, "key")?, text(value, "value")?).map_err(lift)?;
        (*cfg).0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn obb_config_free(cfg: *mut ObbConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured experiment.
///
/// # Safety
/// `cfg` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn obb_run(cfg: *const ObbConfig, out: *mut *mut ObbOutcome) -> ObbStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let inner = experiment::run(&(*cfg).0).map_err(lift)?;
        let names = inner.checks.iter().map(|c| CString::new(c.name.replace('\0', " ")).unwrap_or_default()).collect();
        let summary = CString::new(inner.summary_json()).unwrap_or_default();
        *out = Box::into_raw(Box::new(ObbOutcome { inner, names, summary }));
        Ok(())
    })
}

/// 1 when every check passed, 0 otherwise, −1 for a null handle.
///
/// # Safety
/// `o` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn obb_outcome_passed(o: *const ObbOutcome) -> c_int {
    if o.is_null() {
        return -1;
    }
    c_int::from((*o).inner.passed())
}

/// # Safety
/// `o` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn obb_outcome_n_checks(o: *const ObbOutcome) -> usize {
    if o.is_null() {
        return 0;
    }
    (*o).inner.checks.len()
}

/// Check `i`: its name (owned by the outcome), metric, bound and pass flag.
///
/// # Safety
/// `o` must come from this library; output pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn obb_outcome_check(
    o: *const ObbOutcome,
    i: usize,
    name: *mut *const c_char,
    value: *mut f64,
    bound: *mut f64,
    pass: *mut c_int,
) -> ObbStatus {
    guard(|| {
        non_null(o, "outcome")?;
        let o = &*o;
        let c = o.inner.checks.get(i).ok_or((ObbStatus::OutOfRange, format!("check {i} of {}", o.inner.checks.len())))?;
        if !name.is_null() {
            *name = o.names[i].as_ptr();
        }
        if !value.is_null() {
            *value = c.value;
        }
        if !bound.is_null() {
            *bound = c.bound;
        }
        if !pass.is_null() {
            *pass = c_int::from(c.pass);
        }
        Ok(())
    })
}

/// JSON summary owned by the outcome.
///
/// # Safety
/// `o` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn obb_outcome_summary(o: *const ObbOutcome) -> *const c_char {
    if o.is_null() {
        return ptr::null();
    }
    (*o).summary.as_ptr()
}

/// Writes CSV tables, `summary.json` and, when `svg != 0`, plots into `dir`.
///
/// # Safety
/// `o` must come from this library and `dir` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn obb_outcome_write(o: *const ObbOutcome, dir: *const c_char, svg: c_int) -> ObbStatus {
    guard(|| {
        non_null(o, "outcome")?;
        (*o).inner.write(Path::new(text(dir, "dir")?), svg != 0).map_err(lift)
    })
}

/// # Safety
/// `o` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn obb_outcome_free(o: *mut ObbOutcome) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

fn put_value(p: &ObbPutParams, method: ObbMethod, n: f64) -> Result<f64, Error> {
    let spec = DiffusionSpec::constant(vec![p.sigma2], vec![0.0])?;
    let k = p.strike;
    let phi = Arc::new(move |x: &[f64]| (k - x[0]).max(0.0));
    let h: ScalarFn = Arc::new(move |_, x| (k - x[0]).max(0.0));
    let driver = DriverSpec::discounted(p.rate, phi);
    let grid = TimeGrid::uniform(0.0, p.horizon, p.n_steps)?;
    if method == ObbMethod::Pde {
        let pg = SpaceTimeGrid::centered(grid, &[p.x0], &[p.half_width], p.dx)?;
        return solve_obstacle_projected(&pg, &spec, &driver, &h)?.value_at(0.0, &[p.x0]);
    }
    let bx = LatticeBox::centered(&[p.x0], &[p.half_width], &[p.dx])?;
    let lat = build_lattice(&spec, &grid, &bx)?;
    let eng = LatticeEngine::new(&lat, &[p.x0])?;
    let ob = decompose_obstacle(h, &driver, &spec, &grid)?;
    let inc = obstacle_increments(&eng, &ob, &driver)?;
    Ok(match method {
        ObbMethod::Projected => solve_rbsde_projected(&eng, &driver, &inc)?.y0(),
        ObbMethod::Penalized => solve_rbsde_penalized(&eng, &driver, &inc, n)?.y0(),
        ObbMethod::Homographic => solve_rbsde_homographic(&eng, &driver, &inc, n)?.solution.y0(),
        ObbMethod::Pde => unreachable!(),
    })
}

/// Value at `(0, x0)` of the put-style obstacle problem. `n` is the level
/// for the penalized and homographic methods and ignored otherwise.
///
/// # Safety
/// `params` and `y0` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn obb_put_value(params: *const ObbPutParams, method: ObbMethod, n: f64, y0: *mut f64) -> ObbStatus {
    guard(|| {
        non_null(params, "params")?;
        non_null(y0, "y0")?;
        if matches!(method, ObbMethod::Penalized | ObbMethod::Homographic) && !(n > 0.0) {
            return Err((ObbStatus::Validation, format!("level n must be positive, got {n}")));
        }
        *y0 = put_value(&*params, method, n).map_err(lift)?;
        Ok(())
    })
}
