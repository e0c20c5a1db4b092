//! C ABI for `delay-erk`.
//!
//! Problems and solutions are opaque handles owned by the caller and
//! released with their `_free` functions. Every fallible call returns a
//! [`DerkStatus`]; the message of the last failure on the calling thread is
//! available from [`derk_last_error`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use delay_erk::harness::solve;
use delay_erk::problem::{by_name, l2_norm};
use delay_erk::{Error, IterationPolicy, Method, ProblemSpec, SolveResult};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DelayContractViolation = 3,
    OutOfCoverage = 4,
    StageIterationDivergence = 5,
    LocalizationFailure = 6,
    Config = 7,
    Io = 8,
    Format = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Semi-discrete problem.
pub struct DerkProblem {
    inner: ProblemSpec,
}

/// Result of one integration.
pub struct DerkSolution {
    inner: SolveResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> DerkStatus {
    match err {
        Error::InvalidArgument(_) => DerkStatus::InvalidArgument,
        Error::DelayContractViolation { .. } => DerkStatus::DelayContractViolation,
        Error::OutOfCoverage { .. } => DerkStatus::OutOfCoverage,
        Error::StageIterationDivergence { .. } => DerkStatus::StageIterationDivergence,
        Error::LocalizationFailure { .. } => DerkStatus::LocalizationFailure,
        Error::Config(_) => DerkStatus::Config,
        Error::Format(_) => DerkStatus::Format,
        Error::Io(_) => DerkStatus::Io,
    }
}

struct Failure(DerkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DerkStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DerkStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DerkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DerkStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(DerkStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Failure(
            DerkStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn derk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// `phi_k(z)`.
///
/// # Safety
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn derk_phi_scalar(k: u32, z: f64, out: *mut f64) -> DerkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = delay_erk::phi_scalar(k as usize, z)?;
        Ok(())
    })
}

/// Builds a built-in problem (`example1`, `example2`, `example3`, `decay`,
/// `constant-lag`) on `n` interior grid points.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn derk_problem_new(name: *const c_char, n: usize, out: *mut *mut DerkProblem) -> DerkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = read_str(name, "name")?;
        let inner = by_name(name, n)?;
        *out = Box::into_raw(Box::new(DerkProblem { inner }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from [`derk_problem_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn derk_problem_free(problem: *mut DerkProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Grid size of `problem`, or 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn derk_problem_n(problem: *const DerkProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.n())
}

/// Final time of `problem`, or NaN for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn derk_problem_horizon(problem: *const DerkProblem) -> f64 {
    problem.as_ref().map_or(f64::NAN, |p| p.inner.horizon)
}

/// Integrates `problem` with `method` (`euler`, `erk2`, `col3`, `gl4`) and
/// constant default step `h`, inserting breakpoints when `track` is set.
///
/// # Safety
/// `problem` must be a live handle, `method` a NUL-terminated string and
/// `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn derk_solve(
    problem: *const DerkProblem,
    method: *const c_char,
    h: f64,
    track: bool,
    out: *mut *mut DerkSolution,
) -> DerkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        let method: Method = read_str(method, "method")?.parse()?;
        let inner = solve(&p.inner, &method, h, track, &IterationPolicy::default())?;
        *out = Box::into_raw(Box::new(DerkSolution { inner }));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from [`derk_solve`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_free(solution: *mut DerkSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Number of accepted steps, or 0 for NULL.
///
/// # Safety
/// `solution` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_steps(solution: *const DerkSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.inner.steps.len())
}

/// Number of steps whose delayed argument fell inside the step.
///
/// # Safety
/// `solution` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_overlaps(solution: *const DerkSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.inner.overlap_steps())
}

/// Copies the state at the final time into `buf`.
///
/// # Safety
/// `solution` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_final_state(solution: *const DerkSolution, buf: *mut f64, len: usize) -> DerkStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_out(s.inner.final_state().as_slice(), buf, len)
    })
}

/// Evaluates the continuous extension at `t` into `buf`.
///
/// # Safety
/// Both handles must be live, `solution` must come from `problem`, and
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_evaluate(
    solution: *const DerkSolution,
    problem: *const DerkProblem,
    t: f64,
    buf: *mut f64,
    len: usize,
) -> DerkStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        if p.inner.n() != s.inner.final_state().len() {
            return Err(Failure(DerkStatus::InvalidArgument, "problem and solution sizes differ".into()));
        }
        let u = s.inner.history.evaluate(&p.inner.op, t)?;
        copy_out(u.as_slice(), buf, len)
    })
}

/// Discrete L2 distance between the final state and the exact solution.
///
/// # Safety
/// Both handles must be live and `out` valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_error(
    solution: *const DerkSolution,
    problem: *const DerkProblem,
    out: *mut f64,
) -> DerkStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let exact = p
            .inner
            .exact
            .as_ref()
            .ok_or_else(|| Failure(DerkStatus::InvalidArgument, format!("{} has no exact solution", p.inner.name)))?;
        let reference = exact(p.inner.horizon);
        if reference.len() != s.inner.final_state().len() {
            return Err(Failure(DerkStatus::InvalidArgument, "problem and solution sizes differ".into()));
        }
        *out = l2_norm(&p.inner.op, &s.inner.final_state().difference(&reference));
        Ok(())
    })
}

/// Number of detected breakpoints, excluding the initial point.
///
/// # Safety
/// `solution` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_breakpoint_count(solution: *const DerkSolution) -> usize {
    solution
        .as_ref()
        .and_then(|s| s.inner.breakpoints.as_ref())
        .map_or(0, |bp| bp.detected().len())
}

/// Copies the detected breakpoint times into `buf`.
///
/// # Safety
/// `solution` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn derk_solution_breakpoints(solution: *const DerkSolution, buf: *mut f64, len: usize) -> DerkStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let points = s.inner.breakpoints.as_ref().map_or(&[][..], |bp| bp.detected());
        if points.is_empty() {
            return Ok(());
        }
        copy_out(points, buf, len)
    })
}
