use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn data(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/twenty_pipe").join(file)
}

fn heatnet(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_heatnet")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// The twenty-pipe configuration on a 10-minute, four-step horizon with a short warm-up.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(data("config.json")).unwrap()).unwrap();
    cfg["network"] = data("network.json").to_str().unwrap().into();
    cfg["demand"] = data("demand.csv").to_str().unwrap().into();
    cfg["warmup"] = serde_json::json!({"steps": 3, "tol": 1e-6});
    for cmd in ["simulate", "instopt", "optimize"] {
        cfg[cmd] = serde_json::json!({"t0": 0.0, "tf": 600.0, "steps": 4});
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn twenty_pipe_simulation_over_one_hour() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let cfg = data("config.json");
    let (code, err) = heatnet(&["--config", cfg.to_str().unwrap(), "simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(rows(&out.join("trajectory.csv")), 101);
    assert!(out.join("timing.json").exists());
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let (code, err) = heatnet(&["--config", cfg.to_str().unwrap(), "simulate", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        outputs.push((
            std::fs::read(out.join("trajectory.csv")).unwrap(),
            std::fs::read(out.join("summary.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn single_step_simulation_writes_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("one");
    let (code, err) = heatnet(&[
        "--config", cfg.to_str().unwrap(), "simulate", "--steps", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(rows(&out.join("trajectory.csv")), 2);
}

#[test]
fn instantaneous_then_optimal_control() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let (code, err) = heatnet(&["--config", cfg.to_str().unwrap(), "instopt", "--out", out_s]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(rows(&out.join("desired.csv")), 5);
    let initial: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("initial.json")).unwrap()).unwrap();
    assert!(initial["closure_residual"].as_f64().unwrap() <= 1e-8);

    // an infinite tolerance accepts the starting point
    let (code, err) = heatnet(&["--config", cfg.to_str().unwrap(), "optimize", "--tol", "inf", "--out", out_s]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(summary(&out)["iterations"], 0);

    let (code, err) = heatnet(&["--config", cfg.to_str().unwrap(), "optimize", "--out", out_s]);
    assert_eq!(code, 0, "{err}");
    let s = summary(&out);
    assert_eq!(s["success"], true);
    assert!(s["operating_cost"].as_f64().unwrap() <= s["initial_operating_cost"].as_f64().unwrap());
    assert_eq!(rows(&out.join("controls.csv")), 5);
    assert_eq!(rows(&out.join("optimal_trajectory.csv")), 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let net = data("network.json");
    let missing = dir.path().join("missing.csv");
    let (code, _) = heatnet(&[
        "simulate", "--network", net.to_str().unwrap(), "--demand", missing.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert_eq!(heatnet(&["simulate", "--no-such-flag"]).0, 1);
    assert_eq!(heatnet(&["verify", "--dts", "0.0625", "--out", out.to_str().unwrap()]).0, 1);
    let (code, _) = heatnet(&[
        "simulate", "--network", net.to_str().unwrap(), "--demand", data("demand.csv").to_str().unwrap(),
        "--t0", "10", "--tf", "5", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert_eq!(heatnet(&["--help"]).0, 0);
}
