use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cnn-dpd"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Smoke config with `edit` applied, written into `dir`.
fn edited_smoke(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(&config("smoke.json"));
    edit(&mut v);
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const RUN_ARTIFACTS: [&str; 8] = [
    "report.json",
    "psd_no_dpd.csv",
    "psd_with_dpd.csv",
    "psd_with_quantized_dpd.csv",
    "history.json",
    "dpd_model.json",
    "dpd_model_quantized.json",
    "manifest.json",
];

#[test]
fn smoke_run_writes_hashed_artifacts_and_replays() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("a");
    assert_exit(&run(&["run", "--config", path(&config("smoke.json")), "--out", path(&out), "--quiet"]), 0);
    for a in RUN_ARTIFACTS {
        assert!(out.join(a).is_file(), "missing {a}");
    }
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["config"]["seed"], 1);
    for (name, hash) in manifest["artifacts"].as_object().unwrap() {
        let digest = hex::encode(Sha256::digest(fs::read(out.join(name)).unwrap()));
        assert_eq!(hash.as_str().unwrap(), digest, "{name}");
    }

    let replay = tmp.path().join("b");
    assert_exit(&run(&["run", "--config", path(&out.join("manifest.json")), "--out", path(&replay), "--quiet"]), 0);
    for a in RUN_ARTIFACTS {
        assert_eq!(fs::read(out.join(a)).unwrap(), fs::read(replay.join(a)).unwrap(), "{a} differs on replay");
    }
}

#[test]
fn seed_override_changes_the_stimulus() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = config("smoke.json");
    assert_exit(&run(&["run", "--config", path(&cfg), "--out", path(&a), "--quiet"]), 0);
    assert_exit(&run(&["run", "--config", path(&cfg), "--seed", "9", "--out", path(&b), "--quiet"]), 0);
    let (ra, rb) = (read_json(&a.join("report.json")), read_json(&b.join("report.json")));
    assert_eq!(rb["seed"], 9);
    assert_ne!(ra["no_dpd"]["acpr"], rb["no_dpd"]["acpr"]);
    let mb = read_json(&b.join("manifest.json"));
    assert_eq!(mb["config"]["signal"]["seed"], 9);
    assert_eq!(mb["config"]["ila"]["seed"], 9);
}

#[test]
fn zero_epoch_run_leaves_spectrum_unchanged() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited_smoke(tmp.path(), |v| v["ila"]["epochs_per_iteration"] = 0.into());
    let out = tmp.path().join("out");
    assert_exit(&run(&["run", "--config", path(&cfg), "--out", path(&out), "--quiet"]), 0);
    let r = read_json(&out.join("report.json"));
    let before = r["no_dpd"]["acpr"]["acpr_worst_db"].as_f64().unwrap();
    let after = r["with_dpd"]["acpr"]["acpr_worst_db"].as_f64().unwrap();
    assert!((before - after).abs() <= 0.1, "{before} vs {after}");
    let h = read_json(&out.join("history.json"));
    assert_eq!(h["records"].as_array().unwrap().len(), 1);
}

#[test]
fn default_config_run_improves_acpr() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    assert_exit(&run(&["run", "--config", path(&config("default.json")), "--out", path(&out), "--quiet"]), 0);
    for a in RUN_ARTIFACTS {
        assert!(out.join(a).is_file(), "missing {a}");
    }
    let r = read_json(&out.join("report.json"));
    let gain = r["acpr_improvement_db"].as_f64().unwrap();
    assert!(gain >= 3.0, "ACPR improvement {gain:.2} dB");
    let penalty = r["quantization_acpr_penalty_db"].as_f64().unwrap();
    assert!(penalty.abs() <= 1.0, "quantization penalty {penalty:.2} dB");
}

#[test]
fn bench_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = config("smoke.json");
    assert_exit(&run(&["bench", "--config", path(&cfg), "--out", path(&a), "--quiet"]), 0);
    assert_exit(&run(&["bench", "--config", path(&cfg), "--out", path(&b), "--quiet"]), 0);
    let csv = fs::read_to_string(a.join("benchmark.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("benchmark.csv")).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "family,topology,params,nmse_db");
    assert_eq!(lines.len(), 3);
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn single_entry_bench() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited_smoke(tmp.path(), |v| {
        v["benchmark"]["entries"].as_array_mut().unwrap().truncate(1);
    });
    let out = tmp.path().join("out");
    assert_exit(&run(&["bench", "--config", path(&cfg), "--out", path(&out), "--quiet"]), 0);
    let csv = fs::read_to_string(out.join("benchmark.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("memory_polynomial,P=7 M=4,"), "{}", rows[0]);
}

#[test]
fn estimate_float_and_quantized_models() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited_smoke(tmp.path(), |v| v["quant"]["mode"] = "power_of_two".into());
    let out = tmp.path().join("run");
    assert_exit(&run(&["run", "--config", path(&cfg), "--out", path(&out), "--quiet"]), 0);

    let est = tmp.path().join("est");
    let o = run(&["estimate", path(&out.join("dpd_model.json")), "--out", path(&est), "--quiet"]);
    assert_exit(&o, 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v, read_json(&est.join("estimate.json")));
    assert_eq!(v["kind"], "float");
    // 4 features -> 20 -> 20 -> 2 with K = 5, 5, 1.
    assert_eq!(v["uniform"]["total_multipliers"], 4 * 20 * 5 + 20 * 20 * 5 + 20 * 2);
    assert_eq!(v["power_of_two"]["total_multipliers"], 0);

    let o = run(&["estimate", path(&out.join("dpd_model_quantized.json")), "--out", path(&est), "--quiet"]);
    assert_exit(&o, 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["kind"], "quantized");
    assert!(v["estimate"]["pot_multiplier_savings"].as_u64().unwrap() > 0);
}

#[test]
fn estimate_identity_model() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited_smoke(tmp.path(), |v| {
        v["model"]["topology"]["hidden_layers"] = 0.into();
        v["ila"]["epochs_per_iteration"] = 0.into();
    });
    let out = tmp.path().join("run");
    assert_exit(&run(&["run", "--config", path(&cfg), "--out", path(&out), "--quiet"]), 0);
    let o = run(&["estimate", path(&out.join("dpd_model.json")), "--out", path(&out), "--quiet"]);
    assert_exit(&o, 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    // Only the kernel-1 output layer remains: one multiplier per feature per output.
    assert_eq!(v["uniform"]["total_multipliers"], 4 * 2);
}

#[test]
fn invalid_input_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");

    let o = run(&["run", "--config", path(&tmp.path().join("missing.json")), "--out", path(&out)]);
    assert_exit(&o, 2);

    let cfg = edited_smoke(tmp.path(), |v| v["ila"]["bogus"] = 1.into());
    let o = run(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert_exit(&o, 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus") && err.contains("line"), "{err}");

    let cfg = edited_smoke(tmp.path(), |v| v["ila"]["seed"] = 5.into());
    let o = run(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert_exit(&o, 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ila.seed"));

    let cfg = edited_smoke(tmp.path(), |v| v["benchmark"]["training"]["seed"] = 2.into());
    assert_exit(&run(&["bench", "--config", path(&cfg), "--out", path(&out)]), 2);

    let cfg = edited_smoke(tmp.path(), |v| v["ila"]["iterations"] = 0.into());
    assert_exit(&run(&["run", "--config", path(&cfg), "--out", path(&out)]), 2);

    let cfg = edited_smoke(tmp.path(), |v| v["schema_version"] = 2.into());
    assert_exit(&run(&["run", "--config", path(&cfg), "--out", path(&out)]), 2);

    let junk = tmp.path().join("junk.json");
    fs::write(&junk, "{\"layers\": 3}").unwrap();
    assert_exit(&run(&["estimate", path(&junk), "--out", path(&out)]), 2);
    assert_exit(&run(&["estimate", path(&tmp.path().join("none.json")), "--out", path(&out)]), 2);
}

#[test]
fn failed_training_exits_1_with_partial_history() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited_smoke(tmp.path(), |v| v["ila"]["learning_rate"] = 1e300.into());
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", path(&cfg), "--out", path(&out), "--quiet"]);
    assert_exit(&o, 1);
    assert!(out.join("history.json").is_file());
    assert!(out.join("manifest.json").is_file());
}
