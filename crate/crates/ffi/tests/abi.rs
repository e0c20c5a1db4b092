use std::ffi::{CStr, CString};
use std::ptr;

use delay_erk_ffi::*;

fn last_error() -> String {
    let p = derk_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn problem(name: &str, n: usize) -> *mut DerkProblem {
    let name = CString::new(name).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { derk_problem_new(name.as_ptr(), n, &mut p) }, DerkStatus::Ok);
    p
}

fn solve(p: *const DerkProblem, method: &str, h: f64, track: bool) -> Result<*mut DerkSolution, DerkStatus> {
    let method = CString::new(method).unwrap();
    let mut s = ptr::null_mut();
    match unsafe { derk_solve(p, method.as_ptr(), h, track, &mut s) } {
        DerkStatus::Ok => Ok(s),
        e => Err(e),
    }
}

#[test]
fn phi_scalar_values() {
    let mut out = 0.0;
    assert_eq!(unsafe { derk_phi_scalar(1, -1.0, &mut out) }, DerkStatus::Ok);
    assert!((out - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    assert_eq!(unsafe { derk_phi_scalar(0, 0.0, &mut out) }, DerkStatus::Ok);
    assert_eq!(out, 1.0);
    assert_eq!(unsafe { derk_phi_scalar(1, 0.0, ptr::null_mut()) }, DerkStatus::NullPointer);
}

#[test]
fn solve_example1_through_handles() {
    let p = problem("example1", 40);
    assert_eq!(unsafe { derk_problem_n(p) }, 40);
    assert_eq!(unsafe { derk_problem_horizon(p) }, 1.0);
    let s = solve(p, "gl4", 0.0625, false).unwrap();
    assert_eq!(unsafe { derk_solution_steps(s) }, 16);
    let mut err = 0.0;
    assert_eq!(unsafe { derk_solution_error(s, p, &mut err) }, DerkStatus::Ok);
    assert!(err > 0.0 && err < 1e-6, "{err:e}");

    let mut end = vec![0.0; 40];
    let mut mid = vec![0.0; 40];
    unsafe {
        assert_eq!(derk_solution_final_state(s, end.as_mut_ptr(), end.len()), DerkStatus::Ok);
        assert_eq!(derk_solution_evaluate(s, p, 1.0, mid.as_mut_ptr(), mid.len()), DerkStatus::Ok);
    }
    assert_eq!(end, mid);
    unsafe {
        derk_solution_free(s);
        derk_problem_free(p);
    }
}

#[test]
fn breakpoints_are_reported() {
    let p = problem("constant-lag", 20);
    let s = solve(p, "gl4", 0.03125, true).unwrap();
    let count = unsafe { derk_solution_breakpoint_count(s) };
    assert_eq!(count, 3);
    let mut buf = vec![0.0; count];
    assert_eq!(unsafe { derk_solution_breakpoints(s, buf.as_mut_ptr(), 2) }, DerkStatus::BufferTooSmall);
    assert!(last_error().contains("3 needed"));
    assert_eq!(unsafe { derk_solution_breakpoints(s, buf.as_mut_ptr(), count) }, DerkStatus::Ok);
    for (got, want) in buf.iter().zip([0.3, 0.6, 0.9]) {
        assert!((got - want).abs() < 1e-10);
    }
    assert!(unsafe { derk_solution_overlaps(s) } == 0);
    unsafe {
        derk_solution_free(s);
        derk_problem_free(p);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let bad = CString::new("nope").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { derk_problem_new(bad.as_ptr(), 10, &mut p) }, DerkStatus::Config);
    assert!(last_error().contains("nope"));
    assert_eq!(unsafe { derk_problem_new(ptr::null(), 10, &mut p) }, DerkStatus::NullPointer);

    let p = problem("example3", 10);
    assert_eq!(solve(p, "rk4", 0.1, false).unwrap_err(), DerkStatus::InvalidArgument);
    assert_eq!(solve(p, "gl4", -0.1, false).unwrap_err(), DerkStatus::InvalidArgument);
    assert_eq!(solve(p, "euler", 0.1, true).unwrap_err(), DerkStatus::InvalidArgument);
    assert_eq!(solve(ptr::null(), "gl4", 0.1, false).unwrap_err(), DerkStatus::NullPointer);

    let s = solve(p, "erk2", 0.125, false).unwrap();
    let mut out = 0.0;
    assert_eq!(unsafe { derk_solution_error(s, p, &mut out) }, DerkStatus::InvalidArgument);
    let mut buf = vec![0.0; 10];
    assert_eq!(
        unsafe { derk_solution_evaluate(s, p, 2.0, buf.as_mut_ptr(), buf.len()) },
        DerkStatus::OutOfCoverage
    );
    assert_eq!(unsafe { derk_solution_final_state(s, ptr::null_mut(), 10) }, DerkStatus::NullPointer);
    unsafe {
        derk_solution_free(s);
        derk_problem_free(p);
        derk_problem_free(ptr::null_mut());
        derk_solution_free(ptr::null_mut());
    }
    assert_eq!(unsafe { derk_solution_steps(ptr::null()) }, 0);
    assert!(unsafe { derk_problem_horizon(ptr::null()) }.is_nan());
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/delay_erk.h");
    for name in ["derk_solve", "derk_last_error", "DERK_STATUS_BUFFER_TOO_SMALL", "typedef struct DerkProblem"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
