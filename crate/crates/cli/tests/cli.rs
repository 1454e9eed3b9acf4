use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdro::experiments::{CounterexampleConfig, EmpiricalConfig, McConfig};
use serde_json::Value;
use tempfile::TempDir;

fn sdro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdro")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not a JSON report: {text}"))
}

fn summary(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json"))).unwrap()).unwrap()
}

const JOB: &str = r#"{
  "distribution": { "dim": 1, "support": [[0.0], [1.0], [2.0]], "weights": [0.2, 0.5, 0.3] },
  "loss": { "kind": "expression", "expr": "(xi - x)^2" },
  "decisions": [0.5, 1.0],
  "predictors": [{ "kind": "saa" }, { "kind": "f-dro", "divergence": "kl", "r": 0.3 }]
}"#;

#[test]
fn version_prints_semver() {
    let out = sdro(&["version"]);
    assert!(out.status.success());
    let v = String::from_utf8(out.stdout).unwrap();
    let parts: Vec<&str> = v.trim().split('.').collect();
    assert_eq!(parts.len(), 3, "{v}");
    assert!(parts.iter().all(|p| p.parse::<u64>().is_ok()));
}

#[test]
fn predict_writes_one_row_per_predictor_and_decision() {
    let dir = TempDir::new().unwrap();
    let job = write(dir.path(), "job.json", JOB);
    let out = sdro(&["predict", job.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("predict.csv"));
    assert_eq!(rows[0].join(","), "predictor,x,r,epsilon,K,value,eta,lambda,gamma,gap");
    assert_eq!(rows.len(), 1 + 2 * 2);
    // SAA at x = 1: E(ξ − 1)² = 0.2 + 0.3
    let saa: f64 = rows[2][5].parse().unwrap();
    assert!((saa - 0.5).abs() < 1e-12);
    for r in &rows[3..] {
        let v: f64 = r[5].parse().unwrap();
        assert!(v >= 0.5 - 1e-9);
    }
    let s = summary(dir.path(), "predict");
    assert_eq!(s["subcommand"], "predict");
    assert!(s["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let job = write(dir.path(), "job.json", &JOB.replacen("\"decisions\"", "\"bogus\": 1, \"decisions\"", 1));
    let out = sdro(&["predict", job.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let report = stderr_json(&out);
    assert_eq!(report["error"], "config");
    assert_eq!(report["exit_code"], 2);
}

#[test]
fn missing_file_and_bad_values_exit_2() {
    let out = sdro(&["predict", "/nonexistent/job.json"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let job = write(dir.path(), "job.json", &JOB.replace("\"r\": 0.3", "\"r\": -1"));
    let out = sdro(&["predict", job.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oversized_grid_is_a_resource_error() {
    let dir = TempDir::new().unwrap();
    let job = JOB.replacen(
        "\"decisions\"",
        "\"domain\": { \"box\": { \"lo\": [0, 0, 0], \"hi\": [1, 1, 1], \"resolution\": 100000 } }, \"decisions\"",
        1,
    );
    let job = job.replace("\"dim\": 1, \"support\": [[0.0], [1.0], [2.0]]", "\"dim\": 3, \"support\": [[0,0,0], [1,0,0], [0,1,0]]");
    let path = write(dir.path(), "job.json", &job);
    let out = sdro(&["predict", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "resource");
}

#[test]
fn monte_carlo_requires_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "e.json", r#"{ "replications": 10, "c": 0.2, "N": [5] }"#);
    let out = sdro(&["empirical-infeasibility", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let conflicting = write(dir.path(), "f.json", r#"{ "seed": 1, "replications": 10, "c": 0.2, "N": [5] }"#);
    let out = sdro(&["empirical-infeasibility", conflicting.to_str().unwrap(), "--seed", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
}

#[test]
fn empirical_infeasibility_is_deterministic_across_worker_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "e.json", r#"{ "replications": 5000, "c": 0.2, "N": [5, 10] }"#);
    let mut csvs = Vec::new();
    for workers in ["1", "3"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let out = sdro(&[
            "empirical-infeasibility",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--workers",
            workers,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(fs::read(out_dir.join("empirical-infeasibility.csv")).unwrap());
        let s = summary(&out_dir, "empirical-infeasibility");
        assert_eq!(s["seed"], 11);
        let echoed: EmpiricalConfig = serde_json::from_value(s["config"].clone()).unwrap();
        assert_eq!(echoed.seed, 11);
        assert_eq!(echoed.n, vec![5, 10]);
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn feasibility_mc_summary_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "mc.json",
        r#"{
          "replications": 200,
          "N": [10],
          "true_distribution": { "kind": "discrete", "points": [[0.0], [1.0], [2.0]], "weights": [0.2, 0.5, 0.3] },
          "loss": { "kind": "expression", "expr": "(xi - x)^2" },
          "decision_grid": [0.0, 1.0, 2.0],
          "predictors": [{ "kind": "saa" }, { "kind": "f-dro", "r": 0.3 }]
        }"#,
    );
    let out = sdro(&["feasibility-mc", cfg.to_str().unwrap(), "--seed", "5", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("feasibility-mc.csv"));
    assert_eq!(rows.len(), 1 + 2);
    let s = summary(dir.path(), "feasibility-mc");
    let echoed: McConfig = serde_json::from_value(s["config"].clone()).unwrap();
    echoed.validate().unwrap();
    assert_eq!(echoed.seed, 5);
    assert_eq!(echoed.predictors.len(), 2);
}

#[test]
fn counterexample_writes_both_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{ "replications": 3, "N": 20, "r": 0.3, "k_max": 50 }"#);
    let out = sdro(&["counterexample", cfg.to_str().unwrap(), "--seed", "6", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("counterexample.csv").exists());
    assert_eq!(csv_rows(&dir.path().join("counterexample-replications.csv")).len(), 1 + 3);
    let s = summary(dir.path(), "counterexample");
    let echoed: CounterexampleConfig = serde_json::from_value(s["config"].clone()).unwrap();
    assert_eq!(echoed.k_max, 50);
}

#[test]
fn radius_columns_are_monotone() {
    let dir = TempDir::new().unwrap();
    let out = sdro(&[
        "radius",
        "--divergences",
        "kl,tv,hellinger",
        "--r-max",
        "3",
        "--points",
        "7",
        "--starts",
        "20",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("radius.csv"));
    assert_eq!(rows[0].join(","), "divergence,r,R,method");
    for name in ["kl", "total-variation", "squared-hellinger"] {
        let vals: Vec<f64> = rows[1..].iter().filter(|r| r[0] == name).map(|r| r[2].parse().unwrap()).collect();
        assert_eq!(vals.len(), 7, "{name}");
        assert_eq!(vals[0], 0.0);
        assert!(vals.windows(2).all(|w| w[1] >= w[0]), "{name}: {vals:?}");
    }
}

#[test]
fn bounds_table() {
    let dir = TempDir::new().unwrap();
    let out = sdro(&["bounds", "--n", "10,40", "--r", "0.3", "--cardinality", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("bounds.csv"));
    assert_eq!(rows.len(), 3);
    // (41)^3 e^{-12}
    let v: f64 = rows[2][6].parse().unwrap();
    assert!((v - 41f64.powi(3) * (-12f64).exp()).abs() < 1e-12);
    let out = sdro(&["bounds", "--n", "10", "--r", "0.3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn duality_check_reports_small_gaps() {
    let dir = TempDir::new().unwrap();
    let out = sdro(&["duality-check", "--seed", "1", "--instances", "5", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "duality-check");
    assert_eq!(s["results"]["outside_tolerance"], 0);
    assert_eq!(csv_rows(&dir.path().join("duality-check.csv")).len(), 6);
}
