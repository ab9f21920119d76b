use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use algebroid_ffi::*;

const OSCILLATOR: &str = r#"{
    "algebroid": {"n": 1, "m": 1, "rho": [["1"]], "sigma": [["1"]], "c": [[["0"]]]},
    "lagrangian": {"expr": "0.5*y1^2 - 0.5*x1^2"},
    "mode": "free",
    "initial": {"x": [1.0], "y": [0.0]},
    "integrator": {"h": 0.001, "t1": 1.0},
    "expect": "lie"
}"#;

fn last_error() -> String {
    let p = algebroid_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn system(json: &str) -> *mut AlgebroidSystem {
    let c = CString::new(json).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { algebroid_system_from_json(c.as_ptr(), &mut sys) }, AlgebroidStatus::Ok);
    assert!(algebroid_last_error().is_null());
    sys
}

#[test]
fn oscillator_through_the_c_abi() {
    let sys = system(OSCILLATOR);
    unsafe {
        let (mut n, mut m, mut k) = (0, 0, 0);
        assert_eq!(algebroid_system_dims(sys, &mut n, &mut m, &mut k), AlgebroidStatus::Ok);
        assert_eq!((n, m, k), (1, 1, 0));

        let mut traj = ptr::null_mut();
        assert_eq!(algebroid_system_simulate(sys, &mut traj), AlgebroidStatus::Ok);
        assert_eq!(algebroid_trajectory_len(traj), 1001);
        assert_eq!(algebroid_trajectory_row_width(traj), 3);
        let mut row = [0.0; 3];
        for i in [0, 500, 1000] {
            assert_eq!(algebroid_trajectory_row(traj, i, row.as_mut_ptr(), 3), AlgebroidStatus::Ok);
            assert!((row[1] - row[0].cos()).abs() <= 1e-8);
        }
        assert_eq!(algebroid_trajectory_row(traj, 1001, row.as_mut_ptr(), 3), AlgebroidStatus::OutOfRange);
        assert_eq!(algebroid_trajectory_row(traj, 0, row.as_mut_ptr(), 2), AlgebroidStatus::OutOfRange);
        assert!(last_error().contains("buffer"));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
        assert_eq!(algebroid_trajectory_write_csv(traj, path.as_ptr()), AlgebroidStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert!(text.starts_with("t,x1,y1\n"));
        algebroid_trajectory_free(traj);

        let mut report = ptr::null_mut();
        assert_eq!(algebroid_system_variation_test(sys, 5, 1, &mut report), AlgebroidStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(report).to_str().unwrap()).unwrap();
        assert_eq!(json["variation"]["probes"], 5);
        algebroid_string_free(report);
        algebroid_system_free(sys);
    }
}

#[test]
fn axiom_report_and_check_failure() {
    unsafe {
        let name = CString::new("perturbed_so3").unwrap();
        let mut sys = ptr::null_mut();
        assert_eq!(algebroid_system_from_scenario(name.as_ptr(), 0.0, &mut sys), AlgebroidStatus::Ok);
        let mut rep = AlgebroidAxiomReport::default();
        assert_eq!(algebroid_system_check(sys, 3, &mut rep), AlgebroidStatus::Ok);
        assert!(rep.is_quasi_lie && !rep.is_lie && rep.jacobiator_residual >= 1e-3);
        algebroid_system_free(sys);
    }
    // A spec whose declared class is wrong reports CHECK_FAILED but still
    // hands back the report.
    let sys = system(&OSCILLATOR.replace("\"lie\"", "\"general\""));
    unsafe {
        let mut report = ptr::null_mut();
        assert_eq!(algebroid_system_variation_test(sys, 2, 0, &mut report), AlgebroidStatus::CheckFailed);
        assert!(!report.is_null());
        algebroid_string_free(report);
        algebroid_system_free(sys);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut sys = ptr::null_mut();
        assert_eq!(algebroid_system_from_json(ptr::null(), &mut sys), AlgebroidStatus::NullPointer);
        assert!(last_error().contains("json"));
        let bad = CString::new("{").unwrap();
        assert_eq!(algebroid_system_from_json(bad.as_ptr(), &mut sys), AlgebroidStatus::InputError);
        let utf = [0xffu8, 0];
        assert_eq!(algebroid_system_from_json(utf.as_ptr().cast(), &mut sys), AlgebroidStatus::InvalidUtf8);
        let grid = CString::new(OSCILLATOR.replace("0.001", "0.3")).unwrap();
        assert_eq!(algebroid_system_from_json(grid.as_ptr(), &mut sys), AlgebroidStatus::InputError);
        assert!(sys.is_null());

        let singular = CString::new(OSCILLATOR.replace("0.5*y1^2", "y1")).unwrap();
        let mut report = ptr::null_mut();
        assert_eq!(algebroid_simulate_json(singular.as_ptr(), 0, &mut report), AlgebroidStatus::NumericError);
        assert!(last_error().contains("t = "));
        let ok = CString::new(OSCILLATOR).unwrap();
        assert_eq!(algebroid_simulate_json(ok.as_ptr(), 0, &mut report), AlgebroidStatus::Ok);
        algebroid_string_free(report);

        assert_eq!(algebroid_trajectory_len(ptr::null()), 0);
        algebroid_system_free(ptr::null_mut());
        algebroid_trajectory_free(ptr::null_mut());
        algebroid_string_free(ptr::null_mut());
        let v = CStr::from_ptr(algebroid_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn errors_are_per_thread() {
    let bad = CString::new("{").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { algebroid_system_from_json(bad.as_ptr(), &mut sys) }, AlgebroidStatus::InputError);
    std::thread::spawn(|| assert!(algebroid_last_error().is_null())).join().unwrap();
    assert!(!algebroid_last_error().is_null());
}

#[test]
fn header_is_generated_and_compiles_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/algebroid.h")).unwrap();
    for sym in ["algebroid_system_from_json", "algebroid_trajectory_row", "ALGEBROID_STATUS_NUMERIC_ERROR", "typedef struct AlgebroidSystem AlgebroidSystem"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
    // target/<profile>/deps/<test-binary> → target/<profile>
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    assert!(lib_dir.join("libalgebroid_ffi.so").exists(), "shared library not found in {}", lib_dir.display());
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-o")
        .arg(&exe)
        .arg(format!("-L{}", lib_dir.display()))
        .arg("-lalgebroid_ffi")
        .arg("-lm")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 5001"));
}
