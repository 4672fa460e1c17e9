use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_curvflow");

const SMALL_RUN: &str = r#"{
  "n": 3,
  "f": {"kind": "geometric_mean"},
  "phi": {"kind": "power_sum", "terms": [[1, 1], [1, 3]]},
  "shape": {"kind": "spheroid", "axial": 1.0, "equatorial": 1.15},
  "modes": 16,
  "r_stop": 0.4,
  "monitor_stride": 20
}"#;

fn curvflow(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_echoes_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    let out = curvflow(&["check", &cfg, "--set", "shape.equatorial=1.2", "--set", "n=2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["config"]["shape"]["equatorial"], 1.2);
    assert_eq!(report["config"]["n"], 2);
    assert_eq!(report["f_report"]["kind"], "geometric_mean");
    assert!(!report["classification"]["applicable_cases"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"n": 2, "f": {"kind": "rms"}, "phi": {"kind": "log1p"},
        "shape": {"kind": "sphere", "radius": 1}, "foo": 1}"#);
    let out = curvflow(&["check", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/foo"), "{}", stderr(&out));

    let out = curvflow(&["check", &write(tmp.path(), "ok.json", SMALL_RUN), "--set", "shape.radius=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/shape/radius"), "{}", stderr(&out));
}

#[test]
fn malformed_values_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    for (set, pointer) in [("c_safe=-1", "/c_safe"), ("r_stop=5", "/r_stop"), ("n=1", "/n")] {
        let out = curvflow(&["flow", &cfg, "-o", tmp.path().join("o").to_str().unwrap(), "--set", set]);
        assert_eq!(out.status.code(), Some(2), "{set}: {}", stderr(&out));
        assert!(stderr(&out).contains(pointer), "{set}: {}", stderr(&out));
    }
    let out = curvflow(&["check", &write(tmp.path(), "bad.json", "{\"n\": ")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_classification_exits_three_unless_overridden() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"n": 3, "f": {"kind": "rms"},
        "phi": {"kind": "power_sum", "terms": [[1, 0.5], [1, 2]]},
        "shape": {"kind": "sphere", "radius": 1}, "modes": 8, "r_stop": 0.5}"#);
    let dir = tmp.path().join("out");
    let out = curvflow(&["flow", &cfg, "-o", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let out = curvflow(&["flow", &cfg, "-o", dir.to_str().unwrap(), "--set", "override_classification=true"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.join("run.json").exists());
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            for (name, bytes) in tree(&path) {
                files.push((format!("{}/{name}", path.file_name().unwrap().to_string_lossy()), bytes));
            }
        } else {
            files.push((path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap()));
        }
    }
    files.sort();
    files
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    let dirs: Vec<_> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    let stdouts: Vec<_> = dirs
        .iter()
        .map(|d| {
            let out = curvflow(&["flow", &cfg, "-o", d.to_str().unwrap()]);
            assert!(out.status.success(), "{}", stderr(&out));
            out.stdout
        })
        .collect();
    assert_eq!(stdouts[0], stdouts[1]);
    let (a, b) = (tree(&dirs[0]), tree(&dirs[1]));
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    for expected in ["run.json", "series.csv", "coeffs.csv", "snapshots/profile_0.csv", "snapshots/profile_0.svg"] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(a, b);
}

#[test]
fn rescale_reproduces_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    let run = tmp.path().join("run");
    assert!(curvflow(&["flow", &cfg, "-o", run.to_str().unwrap()]).status.success());
    let again = tmp.path().join("again");
    let out = curvflow(&["rescale", run.to_str().unwrap(), "-o", again.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(run.join("series.csv")).unwrap(), fs::read(again.join("series.csv")).unwrap());

    let shifted = tmp.path().join("shifted");
    let meta: Value = serde_json::from_slice(&fs::read(run.join("run.json")).unwrap()).unwrap();
    let t_est = meta["t_est"].as_f64().unwrap() * 1.01;
    let out = curvflow(&[
        "rescale",
        run.to_str().unwrap(),
        "-o",
        shifted.to_str().unwrap(),
        "--t-est",
        &t_est.to_string(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_ne!(fs::read(run.join("series.csv")).unwrap(), fs::read(shifted.join("series.csv")).unwrap());
}

#[test]
fn sphere_table_ends_at_extinction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    let out = curvflow(&["sphere", &cfg, "--theta0", "1", "--points", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][1], 1.0);
    assert_eq!(rows[4][1], 0.0);
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1]));
}

#[test]
fn verify_reports_json() {
    let out = curvflow(&["verify", "--fd-samples", "50", "--suite-samples", "200"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["settings"]["suite_samples"], 200);
}
