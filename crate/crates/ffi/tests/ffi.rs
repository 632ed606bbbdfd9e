use std::ffi::{CStr, CString};
use std::ptr;

use obstacle_bsde_ffi::*;

fn last_error() -> String {
    let p = obb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn clock_config() -> *mut ObbConfig {
    let text = CString::new("schema_version = 1\ncase = \"clock_measure\"\n[grid]\nn_steps = 100\npde_n_steps = 50\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { obb_config_parse(text.as_ptr(), &mut cfg) }, ObbStatus::Ok);
    cfg
}

#[test]
fn parse_error_reports_line() {
    obb_clear_error();
    assert!(obb_last_error().is_null());
    let text = CString::new("schema_version = 1\ncase = \"clock_measure\"\n\n[grid]\nbogus = 1\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { obb_config_parse(text.as_ptr(), &mut cfg) }, ObbStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("line 5"), "{}", last_error());
}

#[test]
fn null_and_unknown_inputs() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { obb_config_parse(ptr::null(), &mut cfg) }, ObbStatus::NullPointer);
    let name = CString::new("no_such_case").unwrap();
    assert_eq!(unsafe { obb_config_default(name.as_ptr(), &mut cfg) }, ObbStatus::Config);
    assert!(last_error().contains("no_such_case"));
    let bad = [0xffu8, 0];
    assert_eq!(unsafe { obb_config_default(bad.as_ptr().cast(), &mut cfg) }, ObbStatus::InvalidUtf8);
    assert_eq!(unsafe { obb_outcome_passed(ptr::null()) }, -1);
    assert_eq!(unsafe { obb_outcome_n_checks(ptr::null()) }, 0);
    unsafe {
        obb_config_free(ptr::null_mut());
        obb_outcome_free(ptr::null_mut());
    }
}

#[test]
fn cfl_violation_is_a_validation_error() {
    let cfg = clock_config();
    let key = CString::new("grid.n_steps").unwrap();
    let val = CString::new("10").unwrap();
    assert_eq!(unsafe { obb_config_set(cfg, key.as_ptr(), val.as_ptr()) }, ObbStatus::Validation);
    assert!(last_error().contains("100 time steps"), "{}", last_error());
    unsafe { obb_config_free(cfg) };
}

#[test]
fn run_clock_case_and_read_checks() {
    let cfg = clock_config();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { obb_run(cfg, &mut out) }, ObbStatus::Ok);
    assert_eq!(unsafe { obb_outcome_passed(out) }, 1);
    let n = unsafe { obb_outcome_n_checks(out) };
    assert!(n >= 3);
    for i in 0..n {
        let (mut name, mut value, mut bound, mut pass) = (ptr::null(), 0.0, 0.0, 0);
        assert_eq!(unsafe { obb_outcome_check(out, i, &mut name, &mut value, &mut bound, &mut pass) }, ObbStatus::Ok);
        assert!(!unsafe { CStr::from_ptr(name) }.to_bytes().is_empty());
        assert!(value <= bound && pass == 1);
    }
    assert_eq!(
        unsafe { obb_outcome_check(out, n, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) },
        ObbStatus::OutOfRange
    );
    let summary = unsafe { CStr::from_ptr(obb_outcome_summary(out)) }.to_str().unwrap().to_owned();
    assert!(summary.contains("\"case\": \"clock_measure\""));
    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { obb_outcome_write(out, d.as_ptr(), 0) }, ObbStatus::Ok);
    assert_eq!(std::fs::read_to_string(dir.path().join("summary.json")).unwrap(), summary);
    assert!(dir.path().join("clock.csv").exists());
    unsafe {
        obb_outcome_free(out);
        obb_config_free(cfg);
    }
}

#[test]
fn errors_are_thread_local() {
    let mut cfg = ptr::null_mut();
    let name = CString::new("missing").unwrap();
    assert_eq!(unsafe { obb_config_default(name.as_ptr(), &mut cfg) }, ObbStatus::Config);
    std::thread::spawn(|| assert!(obb_last_error().is_null())).join().unwrap();
    assert!(last_error().contains("missing"));
}

fn put() -> ObbPutParams {
    ObbPutParams { sigma2: 0.09, rate: 0.1, strike: 1.0, x0: 1.0, horizon: 1.0, n_steps: 400, dx: 0.03, half_width: 1.8 }
}

#[test]
fn put_methods_agree() {
    let mut y = [0.0; 4];
    for (slot, (m, n)) in y.iter_mut().zip([
        (ObbMethod::Projected, 0.0),
        (ObbMethod::Penalized, 64.0),
        (ObbMethod::Homographic, 64.0),
        (ObbMethod::Pde, 0.0),
    ]) {
        assert_eq!(unsafe { obb_put_value(&put(), m, n, slot) }, ObbStatus::Ok, "{m:?}: {}", last_error());
    }
    // penalized from below, homographic from above
    assert!(y[1] <= y[0] + 1e-12 && y[2] >= y[0] - 1e-12, "{y:?}");
    assert!((y[0] - y[3]).abs() < 0.01 * y[3], "{y:?}");
    let mut v = 0.0;
    assert_eq!(unsafe { obb_put_value(&put(), ObbMethod::Homographic, 0.0, &mut v) }, ObbStatus::Validation);
    let bad = ObbPutParams { sigma2: -1.0, ..put() };
    assert_eq!(unsafe { obb_put_value(&bad, ObbMethod::Projected, 0.0, &mut v) }, ObbStatus::Validation);
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/obstacle_bsde.h")).unwrap();
    for sym in [
        "obb_last_error",
        "obb_config_parse",
        "obb_config_set",
        "obb_run",
        "obb_outcome_check",
        "obb_outcome_free",
        "obb_put_value",
        "OBB_STATUS_VALIDATION",
        "ObbPutParams",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
    assert!(!unsafe { CStr::from_ptr(obb_version()) }.to_bytes().is_empty());
}
