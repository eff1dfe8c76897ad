use std::path::Path;
use std::process::{Command, Output};

fn mvsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsde")).args(args).output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn contraction_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvsde(&["contraction-check", "--model", "double-well-1d", "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(dir.path().join("series.csv").exists());
}

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvsde(&["chaos", "--config", "/nonexistent/chaos.toml", "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "N_particles = 10\n").unwrap();
    let out = mvsde(&["decay", "--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("N_particles"));
}

#[test]
fn failed_window_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("delay.toml");
    // An impossible window forces a check failure without an error.
    std::fs::write(&cfg, "N = 32\nrepetitions = 1\nhorizon = 0.5\ngrid = [0.02, 0.04, 0.08]\nwindow_lo = 5.0\nwindow_hi = 6.0\n")
        .unwrap();
    let out = mvsde(&["delay-rate", "--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn small_chaos_run_reports_a_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("chaos.toml");
    std::fs::write(
        &cfg,
        "grid = [16.0, 32.0, 64.0]\nN_ref = 256\nrepetitions = 2\nbatches = 1\nhorizon = 0.5\nwindow_lo = -10.0\nwindow_hi = 10.0\nmin_r2 = 0.0\n",
    )
    .unwrap();
    let out = mvsde(&["chaos", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["fit"]["slope"].is_f64());
    assert_eq!(report["seed"], 3);
    assert_eq!(report["config"]["batches"], 1);
}

#[test]
fn simulate_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "N = 16\nhorizon = 0.1\n").unwrap();
    let out = mvsde(&["simulate", "--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote"));
}
