use std::path::Path;
use std::process::{Command, Output};

use onzeta::dataio::{read_proxies, Manifest};
use serde_json::Value;
use tempfile::TempDir;

fn onzeta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onzeta"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let out_dir = dir.join("task");
    let mut args = vec!["synth", "--samples", "600", "--dim", "16", "--output", out_dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = onzeta(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    out_dir.join("manifest.json").to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_then_run_writes_predictions_and_report() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let out_dir = tmp.path().join("run");
    let out = onzeta(&["run", "--manifest", &manifest, "--output", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("accumulated accuracy"));

    let report = json(&out_dir.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["num_processed"], 600);
    assert_eq!(report["config_echo"]["alpha"], 1.0);
    assert_eq!(report["config_echo"]["beta"], 0.8);
    let lines = std::fs::read_to_string(out_dir.join("predictions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 600);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first.get("p_tilde").is_none());
    assert!(first["predicted_class"].as_u64().unwrap() < 10);
}

#[test]
fn emit_probs_includes_distributions() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let out_dir = tmp.path().join("run");
    let out = onzeta(&["run", "--manifest", &manifest, "--emit-probs", "--output", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let lines = std::fs::read_to_string(out_dir.join("predictions.jsonl")).unwrap();
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let p: f64 = first["p_tilde"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-9);
}

#[test]
fn same_seed_gives_identical_reports() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let out = onzeta(&["run", "--manifest", &manifest, "--seed", "7", "--epochs", "2", "--output", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        reports.push(std::fs::read(dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn inert_run_matches_baseline() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let dir = tmp.path().join("run");
    let out = onzeta(&["run", "--manifest", &manifest, "--alpha", "0", "--beta", "0", "--output", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);

    let m = Manifest::load(Path::new(&manifest)).unwrap();
    let ds = onzeta::dataio::Dataset::load(&m).unwrap();
    let base = onzeta::pipeline::baseline_predictions(&ds).unwrap();
    let lines = std::fs::read_to_string(dir.join("predictions.jsonl")).unwrap();
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let i = v["sample_index"].as_u64().unwrap() as usize;
        assert_eq!(v["predicted_class"].as_u64().unwrap() as usize, base[i]);
    }
}

#[test]
fn synth_echoes_spec_in_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("task");
    let out = onzeta(&[
        "synth", "--classes", "10", "--samples", "10000", "--bias-angle", "0.3", "--output", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let m = Manifest::load(dir.join("manifest.json")).unwrap();
    assert_eq!(m.classes(), 10);
    assert_eq!(m.n_declared, 10_000);
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("x");
    let d = dir.to_str().unwrap();
    assert_eq!(code(&onzeta(&["synth", "--bias-angle", "2.0", "--output", d])), 2);
    assert_eq!(code(&onzeta(&["synth", "--classes", "50", "--samples", "10", "--output", d])), 2);
    assert_eq!(code(&onzeta(&["frobnicate"])), 2);
    assert_eq!(code(&onzeta(&["run", "--output", d])), 2);
    assert_eq!(code(&onzeta(&["run", "--embeddings", "/nonexistent.onz", "--proxies", "/nonexistent.onz"])), 2);

    let manifest = synth(tmp.path(), &[]);
    assert_eq!(code(&onzeta(&["run", "--manifest", &manifest, "--alpha", "1.5", "--output", d])), 2);
    assert_eq!(code(&onzeta(&["run", "--manifest", &manifest, "--beta", "-0.1", "--output", d])), 2);
    assert_eq!(code(&onzeta(&["run", "--manifest", &manifest, "--epochs", "0", "--output", d])), 2);
}

#[test]
fn temperature_order_only_warns() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let dir = tmp.path().join("run");
    let out = onzeta(&["run", "--manifest", &manifest, "--tau-i", "0.005", "--output", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn explicit_paths_override_manifest() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let task = tmp.path().join("task");
    let dir = tmp.path().join("run");
    let out = onzeta(&[
        "run",
        "--embeddings",
        task.join("embeddings.onz").to_str().unwrap(),
        "--proxies",
        task.join("proxies.onz").to_str().unwrap(),
        "--output",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.join("report.json"));
    assert!(report["accumulated_accuracy"].is_null());
    assert_eq!(report["labeled_samples"], 0);
    drop(manifest);
}

#[test]
fn oracle_without_balancing_is_identity() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let dir = tmp.path().join("oracle");
    let out = onzeta(&["oracle", "--manifest", &manifest, "--alpha", "0", "--output", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let report = json(&dir.join("oracle_report.json"));
    assert_eq!(report["objective"], 0.0);
    assert!(report["duals"].as_array().unwrap().iter().all(|r| r.as_f64() == Some(0.0)));
}

#[test]
fn oracle_converges_on_skewed_stream() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &["--skew", "5"]);
    let dir = tmp.path().join("oracle");
    let out = onzeta(&["oracle", "--manifest", &manifest, "--alpha", "1", "--output", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.join("oracle_report.json"));
    for key in ["stationarity", "primal", "dual", "complementary"] {
        assert!(report["kkt"][key].as_f64().unwrap() < 1e-6, "{key}: {}", report["kkt"]);
    }
    assert!(report["duals"].as_array().unwrap().iter().any(|r| r.as_f64().unwrap() > 0.0));
}

#[test]
fn oracle_proxy_mode_writes_reference_proxies() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let dir = tmp.path().join("oracle");
    let out = onzeta(&["oracle", "--manifest", &manifest, "--mode", "proxy", "--output", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let w = read_proxies(dir.join("reference_proxies.onz")).unwrap();
    assert_eq!((w.classes(), w.dim()), (10, 16));
    assert!(w.max_norm_error() < 1e-6);
    let report = json(&dir.join("oracle_report.json"));
    assert!(report["proxy"]["grad_norm"].as_f64().unwrap() < 1e-6);
}

#[test]
fn bench_sweeps_and_regret_curves() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &["--skew", "5"]);
    let path = tmp.path().join("alpha.json");
    let out = onzeta(&["bench", "--manifest", &manifest, "--sweep", "alpha", "--output", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let report = json(&path);
    assert_eq!(report["sweep"], "alpha");
    assert_eq!(report["points"].as_array().unwrap().len(), 5);

    let path = tmp.path().join("n.json");
    let out = onzeta(&[
        "bench", "--manifest", &manifest, "--sweep", "n", "--values", "50,200,600", "--tol", "1e-5", "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&path);
    assert_eq!(report["label_gap"]["checkpoints"].as_array().unwrap().len(), 3);
    assert_eq!(report["proxy_regret"]["checkpoints"].as_array().unwrap().len(), 3);

    let out = onzeta(&["bench", "--manifest", &manifest, "--sweep", "n", "--values", "10,2.5"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn more_epochs_do_not_lose_accuracy() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), &["--bias-angle", "0.5", "--concentration", "2"]);
    let mut acc = Vec::new();
    for epochs in ["1", "5"] {
        let dir = tmp.path().join(epochs);
        let out = onzeta(&["run", "--manifest", &manifest, "--epochs", epochs, "--output", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        acc.push(json(&dir.join("report.json"))["accumulated_accuracy"].as_f64().unwrap());
    }
    assert!(acc[1] >= acc[0] - 0.005, "{acc:?}");
}
