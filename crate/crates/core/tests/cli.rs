//! End-to-end runs of the `algebroid` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const OSCILLATOR: &str = r#"{
    "name": "oscillator",
    "algebroid": {"n": 1, "m": 1, "rho": [["1"]], "sigma": [["1"]], "c": [[["0"]]]},
    "lagrangian": {"expr": "0.5*y1^2 - 0.5*x1^2"},
    "mode": "free",
    "initial": {"x": [1.0], "y": [0.0]},
    "integrator": {"h": 0.001, "t1": 3.0},
    "output": {"trajectory_csv": "osc.csv", "report_json": "osc.json", "plot_script": "osc.gp"},
    "expect": "lie"
}"#;

fn so3_spec(expect: &str) -> String {
    format!(
        r#"{{
        "algebroid": {{"n": 1, "m": 3, "rho": [["0","0","0"]], "sigma": [["0","0","0"]],
            "c": [[["0","0","0"],["0","0","1"],["0","-1","0"]],
                  [["0","0","-1"],["0","0","0"],["1","0","0"]],
                  [["0","1","0"],["-1","0","0"],["0","0","0"]]]}},
        "lagrangian": {{"expr": "0.5*(y1^2 + 2*y2^2 + 3*y3^2)"}},
        "mode": "free",
        "initial": {{"x": [0.0], "y": [1.0, 0.5, -0.3]}},
        "integrator": {{"h": 0.01, "t1": 1.0}},
        "expect": "{expect}"
    }}"#
    )
}

fn perturbed_spec(expect: &str) -> String {
    so3_spec(expect).replace(r#"[["0","0","0"],["0","0","1"],["0","-1","0"]]"#, r#"[["0","0.1","0"],["-0.1","0","1"],["0","-1","0"]]"#)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_algebroid"))
        .args(args)
        .env("ALGEBROID_LOG", "error")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    dir.join(name).to_string_lossy().into_owned()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn simulate_oscillator_matches_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "osc.json.in", OSCILLATOR);
    let out = run(dir.path(), &["simulate", &spec]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("osc.csv"));
    assert_eq!(header, ["t", "x1", "y1"]);
    assert_eq!(rows.len(), 3001);
    let worst = rows.iter().map(|r| (r[1] - r[0].cos()).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst:e}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("osc.json")).unwrap()).unwrap();
    assert_eq!(report["class"], "lie");
    assert_eq!(report["expect_met"], true);
    assert_eq!(report["simulation"]["steps"], 3000);
    assert!(report["wall_time_s"].as_f64().unwrap() >= 0.0);
    let script = std::fs::read_to_string(dir.path().join("osc.gp")).unwrap();
    assert!(script.contains("'osc.csv'"));
    // The report also goes to stdout.
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["command"], "simulate");
}

#[test]
fn csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", OSCILLATOR);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(dir.path(), &["simulate", &spec, "--out", d.to_str().unwrap(), "--seed", "4"]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(a.join("osc.csv")).unwrap(), std::fs::read(b.join("osc.csv")).unwrap());
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let lie = write(dir.path(), "so3.json", &so3_spec("lie"));
    assert_eq!(run(dir.path(), &["check", &lie]).status.code(), Some(0));
    let wrong = write(dir.path(), "pert.json", &perturbed_spec("lie"));
    let out = run(dir.path(), &["check", &wrong]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quasi_lie"));
    let right = write(dir.path(), "pert2.json", &perturbed_spec("quasi_lie"));
    assert_eq!(run(dir.path(), &["check", &right]).status.code(), Some(0));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{ \"algebroid\": ");
    let out = run(dir.path(), &["check", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));

    let grid = write(dir.path(), "grid.json", &OSCILLATOR.replace("\"h\": 0.001", "\"h\": 0.7"));
    let out = run(dir.path(), &["simulate", &grid]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("osc.csv").exists(), "rejected before running");

    let expr = write(dir.path(), "expr.json", &OSCILLATOR.replace("0.5*x1^2", "0.5*x1^"));
    let out = run(dir.path(), &["check", &expr]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lagrangian.expr"));

    assert_eq!(run(dir.path(), &["check"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["check", "--scenario", "nope"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["check", "--scenario", "oscillator", "--param", "bogus=1"]).status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let singular = write(dir.path(), "sing.json", &OSCILLATOR.replace("0.5*y1^2 - 0.5*x1^2", "y1 - 0.5*x1^2"));
    let out = run(dir.path(), &["simulate", &singular]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t = 0") || String::from_utf8_lossy(&out.stderr).contains("t="));
}

#[test]
fn rolling_ball_scenario_traces_a_circle() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["simulate", "--scenario", "rolling_ball", "--param", "t1=2", "--out", "."]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(&header[3..5], ["y1", "y2"]);
    // Default initial planar velocity (1, 0) at α = 2.
    let worst = rows.iter().map(|r| (r[3] - (2.0 * r[0]).cos()).abs().max((r[4] - (2.0 * r[0]).sin()).abs())).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst:e}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["simulation"]["mode_identity"]["passed"], true);
}

#[test]
fn variation_test_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", OSCILLATOR);
    let out = run(dir.path(), &["variation-test", &spec, "--probes", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = rep["variation"]["checks"].as_array().unwrap();
    assert_eq!(rep["variation"]["probes"], 20);
    assert!(checks[0]["value"].as_f64().unwrap() <= 1e-5);

    let out = run(dir.path(), &["variation-test", "--scenario", "rolling_ball", "--param", "t1=1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(rep["variation"]["checks"][0]["value"].as_f64().unwrap() <= 1e-6);

    let out = run(dir.path(), &["variation-test", "--scenario", "control"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let stat = rep["variation"]["checks"].as_array().unwrap().iter().find(|c| c["name"] == "stationarity").unwrap();
    assert!(stat["value"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn shipped_specs_meet_their_declared_class() {
    let specs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs");
    let mut count = 0;
    for entry in std::fs::read_dir(&specs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let dir = tempfile::tempdir().unwrap();
        let out = run(dir.path(), &["check", path.to_str().unwrap(), "--out", "."]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        count += 1;
    }
    assert!(count >= 4);
}
