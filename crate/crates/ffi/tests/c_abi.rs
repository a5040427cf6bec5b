use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use alveoli_ffi::*;

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/quick.toml")
}

fn load() -> *mut AlvScenario {
    let path = CString::new(scenario_path().to_str().unwrap()).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { alv_scenario_load(path.as_ptr(), &mut s) }, AlvStatus::Ok);
    assert!(!s.is_null());
    s
}

fn last_error() -> String {
    let p = alv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn solve_and_read_back_fields() {
    let s = load();
    assert_eq!(unsafe { alv_scenario_eps(s) }, 0.0625);
    let mut run = ptr::null_mut();
    assert_eq!(
        unsafe { alv_solve(s, AlvSolver::Limit as u32, &mut run) },
        AlvStatus::Ok
    );
    let count = unsafe { alv_run_snapshot_count(run) };
    let cells = unsafe { alv_run_cell_count(run) };
    assert_eq!(count, 5);
    assert!(cells > 0);
    let mut t = 0.0;
    assert_eq!(unsafe { alv_run_time(run, count - 1, &mut t) }, AlvStatus::Ok);
    assert!((t - 0.2).abs() < 1e-12);
    let mut buf = vec![f64::NAN; cells];
    assert_eq!(unsafe { alv_run_field(run, 0, buf.as_mut_ptr(), cells) }, AlvStatus::Ok);
    assert!(buf.iter().all(|&x| x == 0.0), "zero initial data");
    assert_eq!(
        unsafe { alv_run_field(run, count - 1, buf.as_mut_ptr(), cells) },
        AlvStatus::Ok
    );
    let mut summary = AlvRunSummary::default();
    assert_eq!(unsafe { alv_run_summary(run, &mut summary) }, AlvStatus::Ok);
    assert_eq!(summary.steps, 4);
    let max = buf.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(max > 0.0 && max <= summary.max_abs);
    assert!(summary.worst_balance <= 1e-10);
    unsafe {
        alv_run_free(run);
        alv_scenario_free(s);
    }
}

#[test]
fn argument_errors_are_reported() {
    let s = load();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { alv_solve(s, 17, &mut run) }, AlvStatus::InvalidArgument);
    assert!(last_error().contains("17"));
    assert!(run.is_null());
    assert_eq!(unsafe { alv_solve(ptr::null(), 0, &mut run) }, AlvStatus::NullPointer);
    assert_eq!(unsafe { alv_scenario_set_eps(s, 2.0) }, AlvStatus::Config);
    assert_eq!(
        unsafe { alv_scenario_eps(s) },
        0.0625,
        "failed update leaves the scenario intact"
    );

    assert_eq!(
        unsafe { alv_solve(s, AlvSolver::Micro as u32, &mut run) },
        AlvStatus::Ok
    );
    let mut buf = [0.0; 3];
    assert_eq!(
        unsafe { alv_run_field(run, 0, buf.as_mut_ptr(), 3) },
        AlvStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { alv_run_field(run, 99, buf.as_mut_ptr(), 3) },
        AlvStatus::InvalidArgument
    );
    let mut t = 0.0;
    assert_eq!(unsafe { alv_run_time(run, 99, &mut t) }, AlvStatus::InvalidArgument);
    unsafe {
        alv_run_free(run);
        alv_scenario_free(s);
        alv_run_free(ptr::null_mut());
        alv_scenario_free(ptr::null_mut());
        alv_string_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_and_echo() {
    let bad = CString::new("[geometry]\nn = 2\n").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { alv_scenario_parse(bad.as_ptr(), &mut s) }, AlvStatus::Config);
    assert!(s.is_null());
    assert!(!last_error().is_empty());

    let invalid_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { alv_scenario_parse(invalid_utf8.as_ptr().cast(), &mut s) },
        AlvStatus::Utf8
    );

    let s = load();
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { alv_scenario_echo(s, &mut text) }, AlvStatus::Ok);
    let echoed = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    unsafe { alv_string_free(text) };
    let again = CString::new(echoed.clone()).unwrap();
    let mut s2 = ptr::null_mut();
    assert_eq!(unsafe { alv_scenario_parse(again.as_ptr(), &mut s2) }, AlvStatus::Ok);
    let mut text2 = ptr::null_mut();
    assert_eq!(unsafe { alv_scenario_echo(s2, &mut text2) }, AlvStatus::Ok);
    assert_eq!(
        unsafe { CStr::from_ptr(text2) }.to_str().unwrap(),
        echoed,
        "echo is a fixed point"
    );
    unsafe {
        alv_string_free(text2);
        alv_scenario_free(s);
        alv_scenario_free(s2);
    }
    let v = unsafe { CStr::from_ptr(alv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <stdlib.h>
#include "alveoli.h"

int main(int argc, char **argv) {
    AlvScenario *s = NULL;
    if (alv_scenario_load(argv[1], &s) != ALV_STATUS_OK) {
        fprintf(stderr, "%s\n", alv_last_error());
        return 1;
    }
    AlvRun *run = NULL;
    if (alv_solve(s, ALV_SOLVER_OUTER, &run) != ALV_STATUS_OK) return 2;
    size_t n = alv_run_cell_count(run);
    size_t k = alv_run_snapshot_count(run);
    double *buf = malloc(n * sizeof(double));
    if (alv_run_field(run, k - 1, buf, n) != ALV_STATUS_OK) return 3;
    AlvRunSummary summary;
    if (alv_run_summary(run, &summary) != ALV_STATUS_OK) return 4;
    if (alv_solve(s, 42, &run) != ALV_STATUS_INVALID_ARGUMENT) return 5;
    printf("%zu %zu %.6e\n", k, summary.steps, summary.max_abs);
    free(buf);
    alv_run_free(run);
    alv_scenario_free(s);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static
/// library, when a C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libalveoli_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");
    let out = Command::new(&bin).arg(scenario_path()).output().unwrap();
    assert!(
        out.status.success(),
        "C program failed: {:?} {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(&fields[..2], ["5", "4"]);
    assert!(fields[2].parse::<f64>().unwrap() > 0.0);
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
        {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
