use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_DISK: &str = r#"{
  "domain": { "origin": [-1.0, -1.0], "extent": [2.0, 2.0], "cells": [40, 40] },
  "shape": { "kind": "ball", "radius": 0.7 },
  "phi": { "kind": "euclidean" },
  "psi": { "kind": "euclidean" },
  "h": 0.0625,
  "t_max": 1.0,
  "probes": [0.1]
}"#;

fn atwflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atwflow")).args(args).output().expect("binary runs")
}

fn scenario(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, body).unwrap();
    p
}

fn run_into(sc: &Path, out: &Path, workers: &str) -> Output {
    atwflow(&["--workers", workers, "run", "--scenario", sc.to_str().unwrap(), "--output", out.to_str().unwrap()])
}

#[test]
fn run_writes_one_trace_row_per_step() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(dir.path(), SMALL_DISK);
    let out = dir.path().join("out");
    let o = run_into(&sc, &out, "2");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "n,t,volume,P_phi,delta_cert,residual");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let steps = report["steps"].as_u64().expect("report has a step count") as usize;
    // completed steps plus the header
    assert_eq!(rows.len(), steps + 1);
    assert!(rows[1].starts_with("1,"));
    for f in ["arrival.atwf", "arrival.pgm", "contour_t0.1.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn output_is_independent_of_worker_count() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(dir.path(), SMALL_DISK);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_into(&sc, &a, "1").status.code(), Some(0));
    assert_eq!(run_into(&sc, &b, "4").status.code(), Some(0));
    for f in ["trace.csv", "arrival.atwf"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn bad_scenarios_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let missing_h = SMALL_DISK.replace("\"h\": 0.0625,", "");
    let unknown = SMALL_DISK.replace("\"t_max\"", "\"bogus\": 1, \"t_max\"");
    let too_big = SMALL_DISK.replace("\"radius\": 0.7", "\"radius\": 0.99");
    for (body, needle) in [(missing_h, "h required"), (unknown, "bogus"), (too_big, "frame")] {
        let sc = scenario(dir.path(), &body);
        let o = atwflow(&["run", "--scenario", sc.to_str().unwrap(), "--output", dir.path().join("x").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle), "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(atwflow(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(atwflow(&["run"]).status.code(), Some(2));
    assert_eq!(atwflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn oracle_prints_the_square_phase() {
    let o = atwflow(&["oracle", "cross", "--t", "1.0", "--emit", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("-1,-1") || text.contains("-1.0,-1.0"), "{text}");
}

#[test]
fn check_inclusion_passes_on_a_disk() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(dir.path(), SMALL_DISK);
    let out = dir.path().join("out");
    let o = atwflow(&["check", "--scenario", sc.to_str().unwrap(), "--output", out.to_str().unwrap(), "--property", "inclusion"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn step_and_distance_write_rasters() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(dir.path(), SMALL_DISK);
    let out = dir.path().join("out");
    let s = sc.to_str().unwrap();
    assert_eq!(atwflow(&["step", "--scenario", s, "--output", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(atwflow(&["distance", "--scenario", s, "--output", out.to_str().unwrap()]).status.code(), Some(0));
    for f in ["next_set.atwf", "w.atwf", "step.json", "distance.atwf", "distance.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}
