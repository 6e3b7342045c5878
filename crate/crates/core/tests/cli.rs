//! End-to-end tests of the `bdsim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdsim")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

/// All output files except the wall-clock record, sorted by name.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

const CONTACT: &str = r#"{"type": "contact", "lambda": LAMBDA, "kernel": {"type": "uniform_ball", "radius": 1.0}}"#;

fn contact_config(lambda: f64, upper_lambda: Option<f64>, n_traj: usize) -> String {
    let birth = |l: f64| CONTACT.replace("LAMBDA", &format!("{l:?}"));
    let options = match upper_lambda {
        Some(l) => format!(
            r#", "options": {{"upper_model": {{"name": "upper", "births": [{}], "deaths": [{{"type": "constant", "mu": 1.0}}]}}}}"#,
            birth(l)
        ),
        None => String::new(),
    };
    format!(
        r#"{{
  "schema_version": 1,
  "dimension": 2,
  "model": {{"name": "contact", "births": [{}], "deaths": [{{"type": "constant", "mu": 1.0}}]}},
  "initial": {{"type": "points", "points": [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [1.0, 1.0]]}},
  "horizon": 1.0,
  "n_traj": {n_traj},
  "master_seed": 42{options}
}}"#,
        birth(lambda)
    )
}

#[test]
fn pure_death_writes_three_deaths_then_ends() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "death.json",
        r#"{"schema_version": 1, "dimension": 1,
            "model": {"name": "death", "births": [], "deaths": [{"type": "constant", "mu": 1.0}]},
            "initial": {"type": "points", "points": [[0.0], [1.0], [2.0]]},
            "horizon": 1000.0, "n_traj": 1, "master_seed": 3}"#,
    );
    let out_dir = tmp.path().join("out");
    let out = bdsim(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("trajectory_0.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["dimension"], 1);
    assert_eq!(lines[0]["initial"].as_array().unwrap().len(), 3);
    for l in &lines[1..4] {
        assert_eq!(l["kind"], "death");
        assert!(l["t"].is_f64() && l["id"].is_i64() && l["x"].is_array());
    }
    assert_eq!(lines[4]["status"], "absorbed");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status_counts"]["absorbed"], 1);
    assert_eq!(manifest["master_seed"], 3);
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
    let timing: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("timing.json")).unwrap()).unwrap();
    assert!(timing["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &contact_config(1.0, None, 12));
    let run = |name: &str, extra: &[&str]| {
        let dir = tmp.path().join(name);
        let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = bdsim(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs(&dir)
    };
    let a = run("a", &[]);
    assert_eq!(a.len(), 13);
    assert_eq!(a, run("b", &[]));
    assert_eq!(a, run("c", &["--jobs", "1"]));
    let other = run("d", &["--seed", "7"]);
    assert_ne!(a, other);

    // a manifest replays its run
    let replay = tmp.path().join("replay");
    let manifest = tmp.path().join("a").join("manifest.json");
    let out = bdsim(&["simulate", "--config", manifest.to_str().unwrap(), "--out", replay.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(outputs(&replay), a);
}

#[test]
fn superlinear_model_hits_small_cap() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "boom.json",
        r#"{"schema_version": 1, "dimension": 1,
            "model": {"name": "boom", "births": [{"type": "power", "theta": 1.0, "p": 2.0, "region": {"lo": [0.0], "hi": [1.0]}}]},
            "initial": {"type": "points", "points": [[0.5]]},
            "horizon": 10.0, "caps": {"max_population": 2}, "n_traj": 20, "master_seed": 1}"#,
    );
    let dir = tmp.path().join("o");
    let out = bdsim(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status_counts"]["cap_hit"], 20);
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let bad = contact_config(1.0, None, 2).replace("\"horizon\": 1.0", "\"horizon\": -1.0");
    let cfg = write(tmp.path(), "bad.json", &bad);
    let out = bdsim(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));

    let dup = contact_config(1.0, None, 2).replace("[1.0, 1.0]", "[0.0, 0.0]");
    let cfg = write(tmp.path(), "dup.json", &dup);
    let out = bdsim(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("initial"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bdsim(&[]).status.code(), Some(1));
    assert_eq!(bdsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bdsim(&["simulate"]).status.code(), Some(1));
    assert_eq!(bdsim(&["verify", "no-such-suite"]).status.code(), Some(1));
    assert_eq!(bdsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn couple_identical_models_gives_identical_paths() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "same.json", &contact_config(1.0, Some(1.0), 5));
    let dir = tmp.path().join("o");
    let out = bdsim(&["couple", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--check-premise"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..5 {
        let lower = fs::read(dir.join(format!("lower_{i}.jsonl"))).unwrap();
        let upper = fs::read(dir.join(format!("upper_{i}.jsonl"))).unwrap();
        assert_eq!(lower, upper);
        let audit = fs::read_to_string(dir.join(format!("audit_{i}.jsonl"))).unwrap();
        assert_eq!(audit.lines().count(), lower.iter().filter(|b| **b == b'\n').count() - 2);
        assert!(audit.lines().all(|l| l.contains("\"included\":true")));
    }
}

#[test]
fn couple_contact_under_stronger_contact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &contact_config(1.0, Some(2.0), 20));
    let dir = tmp.path().join("o");
    let out = bdsim(&["couple", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--check-premise"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["inclusion_violations"], 0);
    let first = outputs(&dir);
    let again = tmp.path().join("o2");
    assert!(bdsim(&["couple", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]).status.success());
    assert_eq!(outputs(&again), first);
}

#[test]
fn inverted_premise_is_refused_with_witness() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "inv.json", &contact_config(2.0, Some(1.0), 3));
    let dir = tmp.path().join("o");
    let out = bdsim(&["couple", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--check-premise"]);
    assert_eq!(out.status.code(), Some(2));
    let v = stdout_json(&out);
    assert_eq!(v["premise"], "violated");
    assert_eq!(v["witness"]["kind"], "birth");
    assert!(v["witness"]["rate_lower_model"].as_f64().unwrap() > v["witness"]["rate_upper_model"].as_f64().unwrap());
    assert!(!dir.exists());
}

#[test]
fn verify_reports_json_and_exit_code() {
    let out = bdsim(&["verify", "metric", "exponential-clocks", "--scale", "0.05", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["failures"], 0);
    for c in v["checks"].as_array().unwrap() {
        assert!(c["statistic"].is_number() && c["threshold"].is_number() && c["pass"].as_bool().unwrap());
    }
    let again = bdsim(&["verify", "metric", "exponential-clocks", "--scale", "0.05", "--seed", "5"]);
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn metric_command() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.json", "[[0.0], [1.0]]");
    let b = write(tmp.path(), "b.json", "[[0.5], [1.0]]");
    let c = write(tmp.path(), "c.json", "[[0.5], [1.0], [2.0]]");
    let bad = write(tmp.path(), "bad.json", "[[0.5], oops");

    let same = stdout_json(&bdsim(&["metric", a.to_str().unwrap(), a.to_str().unwrap()]));
    assert_eq!(same["dist"], 0.0);

    let v = stdout_json(&bdsim(&["metric", a.to_str().unwrap(), b.to_str().unwrap()]));
    assert_eq!(v["dist"], 0.5);
    assert_eq!(v["euclidean"], 0.5);
    assert_eq!(v["pairs"], serde_json::json!([[0, 0], [1, 1]]));

    let v = stdout_json(&bdsim(&["metric", a.to_str().unwrap(), c.to_str().unwrap()]));
    assert_eq!(v["dist"], 1.0);
    assert_eq!(v["note"], "cardinality differs");

    assert_ne!(bdsim(&["metric", a.to_str().unwrap(), bad.to_str().unwrap()]).status.code(), Some(0));
}
