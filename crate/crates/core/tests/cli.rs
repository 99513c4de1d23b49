use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kalmanopt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["train", "--n-samples", "200", "--out", out];
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "3"]);
    }
    args.extend_from_slice(extra);
    run(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn train_writes_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = rows(&dir.path().join("metrics.csv"));
    assert_eq!(metrics.len(), 3);
    assert!(metrics.iter().all(|r| r[0] == "epoch"));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["metrics_rows"], 3);
    assert_eq!(m["epoch_wall_clock_s"].as_array().unwrap().len(), 3);
    assert_eq!(m["settings"]["optimizer"], "koala_pp");
}

#[test]
fn diagnostics_add_step_rows() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), &["--diagnostics", "--batch-size", "40"])), 0);
    let metrics = rows(&dir.path().join("metrics.csv"));
    let m = json(&dir.path().join("manifest.json"));
    let steps = m["steps_per_epoch"].as_u64().unwrap() as usize;
    assert_eq!(steps, 4);
    assert_eq!(metrics.iter().filter(|r| r[0] == "step").count(), 3 * steps);
    assert_eq!(metrics.iter().filter(|r| r[0] == "epoch").count(), 3);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train(&a, &["--optimizer", "koala_pp_ns", "--seed", "5"])), 0);
    let manifest = a.join("manifest.json");
    let o = run(&["train", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(json(&manifest)["metrics_sha256_git"], json(&b.join("manifest.json"))["metrics_sha256_git"]);
}

#[test]
fn cli_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[run]\nepochs = 5\nbatch_size = 20\n[optimizer]\nlr = 0.5\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "2", "--n-samples", "100", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = &json(&out.join("manifest.json"))["settings"];
    assert_eq!(s["epochs"], 2);
    assert_eq!(s["batch_size"], 20);
    assert_eq!(s["lr"], 0.5);
    assert_eq!(rows(&out.join("metrics.csv")).len(), 2);
}

#[test]
fn preset_fills_lower_precedence_values() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), &["--preset", "lm-style"])), 0);
    let s = &json(&dir.path().join("manifest.json"))["settings"];
    assert_eq!(s["lr"], 2e-3);
    assert_eq!(s["weight_decay"], 1e-4);
    let lr: Vec<f64> = rows(&dir.path().join("metrics.csv")).iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(lr.iter().all(|&x| x == 2e-3));
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), &["--epochs", "0"])), 2);
    assert_eq!(code(&train(dir.path(), &["--batch-size", "0"])), 2);
    assert_eq!(code(&train(dir.path(), &["--q", "-1"])), 2);
    assert_eq!(code(&train(dir.path(), &["--optimizer", "nope"])), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run]\nepochz = 3\n").unwrap();
    assert_eq!(code(&run(&["train", "--config", cfg.to_str().unwrap()])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&train(dir.path(), &["--dataset", "csv", "--data-path", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["diagnose", "--optimizer", "sgd", "--out", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn divergence_exits_1_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--model", "rosenbrock", "--optimizer", "sgd", "--lr", "1.0", "--epochs", "50"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let snap = json(&dir.path().join("failure.json"));
    assert!(snap.is_object());
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn sgd_on_the_bowl_decreases_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--model", "quadratic_bowl", "--optimizer", "sgd", "--lr", "0.05", "--epochs", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let loss: Vec<f64> = rows(&dir.path().join("metrics.csv")).iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(loss.len(), 10);
    assert!(loss.windows(2).all(|w| w[1] < w[0]), "{loss:?}");
}

#[test]
fn diagnose_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["diagnose", "--epochs", "2", "--n-samples", "200", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,angle_deg,hv,lambda1,lambda2,s_k,v_norm,floor_hits");
    let trace = rows(&dir.path().join("diagnostics.csv"));
    assert_eq!(trace.len(), 2 * 5);
    let angle0: f64 = trace[0][1].parse().unwrap();
    assert!(angle0.abs() < 1e-6, "{angle0}");
    for r in &trace {
        let (l1, l2): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!(l1 >= l2);
    }
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["steps"], 10);
    let frac = summary["acute_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));
}

#[test]
fn multi_seed_runs_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--seeds", "1,2,3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in [1, 2, 3] {
        let sub = dir.path().join(format!("seed-{s}"));
        assert_eq!(json(&sub.join("manifest.json"))["settings"]["seed"], s);
        assert_eq!(rows(&sub.join("metrics.csv")).len(), 3);
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean final top1_err_pct over 3 seeds"));
    let solo = dir.path().join("solo");
    assert_eq!(code(&train(&solo, &["--seed", "2"])), 0);
    assert_eq!(
        fs::read(solo.join("metrics.csv")).unwrap(),
        fs::read(dir.path().join("seed-2/metrics.csv")).unwrap()
    );
}

#[test]
fn generate_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        assert_eq!(code(&run(&["generate-data", "--kind", "two_moons", "--out", p.to_str().unwrap()])), 0);
    }
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 201);
    let c = dir.path().join("c.csv");
    assert_eq!(code(&run(&["generate-data", "--kind", "gaussian_blobs", "--n", "90", "--centers", "2", "--out", c.to_str().unwrap()])), 0);

    let out = dir.path().join("run");
    let o = train(&out, &["--dataset", "csv", "--data-path", c.to_str().unwrap(), "--model", "logistic_regression"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["generate-data", "--kind", "spirals", "--out", c.to_str().unwrap()])), 2);
}
