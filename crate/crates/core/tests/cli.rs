//! Command-line behaviour: outputs and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alveoli::scenario::Scenario;

fn quick_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/quick.toml")
}

fn quick_text() -> String {
    std::fs::read_to_string(quick_path()).unwrap()
}

fn alveoli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alveoli")).args(args).output().unwrap()
}

fn run_with(config_text: &str, args: &[&str]) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scenario.toml");
    std::fs::write(&config, config_text).unwrap();
    let out = dir.path().join("out");
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (alveoli(&all), dir)
}

#[test]
fn validate_config_echoes_a_parseable_scenario() {
    let out = alveoli(&["validate-config", "--config", quick_path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let s = Scenario::parse(&text).unwrap();
    assert_eq!(s.echo(), text);
    assert!(text.contains("[run.tolerances]"), "defaults are echoed");
}

#[test]
fn configuration_errors_exit_with_2() {
    let missing = alveoli(&["validate-config", "--config", "/nonexistent/scenario.toml"]);
    assert_eq!(missing.status.code(), Some(2));

    let no_run: String = quick_text().split("[run]").next().unwrap().to_string();
    let (out, _dir) = run_with(&no_run, &["solve-limit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run"));

    let unknown = quick_text().replace("[run]", "[run]\nsteps = 3");
    let (out, _dir) = run_with(&unknown, &["solve-limit"]);
    assert_eq!(out.status.code(), Some(2));

    let (out, _dir) = run_with(&quick_text(), &["solve-limit", "--eps", "0.3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solver_failure_exits_with_3() {
    let text = quick_text() + "\n[run.tolerances]\nmax_iterations = 1\n";
    let (out, _dir) = run_with(&text, &["solve-micro"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_check_exits_with_4() {
    let text = quick_text() + "\n[run.tolerances]\nmass_balance = 1e-30\n";
    let (out, dir) = run_with(&text, &["solve-limit"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    // Outputs are still written for inspection.
    assert!(dir.path().join("out/steps.csv").exists());
}

#[test]
fn solve_commands_write_their_outputs() {
    for cmd in ["solve-micro", "solve-limit", "solve-outer", "solve-corrector"] {
        let (out, dir) = run_with(&quick_text(), &[cmd, "--parallel", "2"]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let o = dir.path().join("out");
        for f in ["steps.csv", "summary.json", "manifest.json", "scenario.toml"] {
            assert!(o.join(f).exists(), "{cmd}: {f} missing");
        }
        let steps = std::fs::read_to_string(o.join("steps.csv")).unwrap();
        assert_eq!(steps.lines().count(), 1 + 5, "{cmd}: header plus five snapshots");
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
        assert!(summary["worst_balance"].as_f64().unwrap() <= 1e-10);
    }
}

#[test]
fn cell_w_matches_the_far_field_budget() {
    let (out, dir) = run_with(&quick_text(), &["cell", "w", "chi-1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("out/cells.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let w = &rows[0];
    assert_eq!(&w[col("problem")], "w");
    let num = |r: &csv::StringRecord, c: &str| r[col(c)].parse::<f64>().unwrap();
    for side in ["top", "bottom"] {
        let got = num(w, &format!("far_flux_{side}"));
        let want = num(w, &format!("expected_flux_{side}"));
        assert!((got - want).abs() <= 1e-4, "{side}: {got} vs {want}");
    }
    assert!(num(w, "far_flux_top") < 0.0);
    assert!(dir.path().join("out/cells.json").exists());

    let (out, _dir) = run_with(&quick_text(), &["cell", "chi-7"]);
    assert_eq!(out.status.code(), Some(2));
}
