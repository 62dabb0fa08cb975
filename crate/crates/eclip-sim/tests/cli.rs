//! Command-line contract: flag overrides, the output environment variable,
//! and failure exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eclip-sim"))
}

fn mix2() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/mix2.toml")
}

#[test]
fn env_var_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let flag_dir = dir.path().join("flagged");
    let env_dir = dir.path().join("enved");
    let output = bin()
        .args(["plan", "--config"])
        .arg(mix2())
        .args(["--mode", "eclip", "--out"])
        .arg(&flag_dir)
        .env("ECLIP_SIM_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(env_dir.join("table-eclip.json").exists());
    assert!(!flag_dir.exists(), "--out must lose to ECLIP_SIM_OUT");
}

#[test]
fn empty_env_var_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let flag_dir = dir.path().join("flagged");
    let output = bin()
        .args(["plan", "--config"])
        .arg(mix2())
        .args(["--mode", "baseline", "--out"])
        .arg(&flag_dir)
        .env("ECLIP_SIM_OUT", "")
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(flag_dir.join("table-baseline.json").exists());
}

#[test]
fn workers_flag_truncates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one");
    let output = bin()
        .args(["run", "--config"])
        .arg(mix2())
        .args(["--mode", "baseline", "--workers", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(out.join("requests-baseline.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let worker = line.split(',').next().unwrap();
        assert_eq!(worker, "0", "only the first worker may remain");
    }
}

#[test]
fn switch_max_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tight");
    let output = bin()
        .args(["plan", "--config"])
        .arg(mix2())
        .args(["--mode", "eclip", "--switch-max", "0", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("table-eclip.json")).unwrap())
            .unwrap();
    for worker in table["workers"].as_array().unwrap() {
        let configs = worker["configs"].as_array().unwrap();
        assert!(
            configs.windows(2).all(|w| w[0] == w[1]),
            "budget 0 must pin each worker to one config"
        );
    }
}

#[test]
fn unknown_mode_fails_with_diagnostic() {
    let output = bin()
        .args(["run", "--config"])
        .arg(mix2())
        .args(["--mode", "sideways"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("sideways"), "stderr must name the bad mode: {stderr}");
}

#[test]
fn missing_config_fails() {
    let output = bin()
        .args(["run", "--config", "/nonexistent/mix.toml", "--mode", "baseline"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(output.stderr.starts_with(b"error:"));
}

#[test]
fn unknown_flag_fails() {
    let output = bin().args(["mix", "--frobnicate"]).output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn malformed_knees_fails_with_diagnostic() {
    for bad in ["phased", "phased:0:0.2", "weighted:1,2", "fixed:59", "banana"] {
        let output = bin()
            .args(["profile", "synth", "--model", "a:4", "--seed", "1", "--knees", bad])
            .args(["--out", "/dev/null"])
            .output()
            .unwrap();
        assert!(!output.status.success(), "knees spec {bad:?} must be rejected");
    }
}

#[test]
fn report_rerenders_saved_results() {
    let dir = tempfile::tempdir().unwrap();
    let mix_out = dir.path().join("mix");
    let output = bin()
        .args(["mix", "--config"])
        .arg(mix2())
        .arg("--out")
        .arg(&mix_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let rep_out = dir.path().join("rep");
    let output = bin()
        .arg("report")
        .arg(mix_out.join("results.json"))
        .args(["--format", "json", "--out"])
        .arg(&rep_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep_out.join("report.json")).unwrap())
            .unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert!(rows.iter().any(|r| r["scenario"] == "eclip"));
    // The re-rendered report must agree with the one the mix run wrote.
    let original = std::fs::read_to_string(mix_out.join("report.csv")).unwrap();
    let rerendered_csv_out = dir.path().join("rep-csv");
    let output = bin()
        .arg("report")
        .arg(mix_out.join("results.json"))
        .arg("--out")
        .arg(&rerendered_csv_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let rerendered = std::fs::read_to_string(rerendered_csv_out.join("report.csv")).unwrap();
    assert_eq!(original, rerendered);
}

#[test]
fn seed_changes_poisson_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "5"), (&b, "6")] {
        let output = bin()
            .args(["run", "--config"])
            .arg(mix2())
            .args(["--mode", "eclip", "--seed", seed, "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(output.status.success());
    }
    let ra = std::fs::read(a.join("requests-eclip.csv")).unwrap();
    let rb = std::fs::read(b.join("requests-eclip.csv")).unwrap();
    assert_ne!(ra, rb, "different seeds must move the sampled arrivals");
}

#[test]
fn slowdown_mode_flag_accepted() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["include-self", "exclude-self", "excess-over-capacity"] {
        let out = dir.path().join(mode);
        let output = bin()
            .args(["plan", "--config"])
            .arg(mix2())
            .args(["--mode", "eclip", "--slowdown-mode", mode, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "slowdown mode {mode} rejected: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        assert!(out.join("table-eclip.json").exists());
    }
}
