use std::path::Path;
use std::process::{Command, Output};

fn kdmhe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdmhe"))
        .args(args)
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = kdmhe(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn linear_pipeline_step_by_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for cmd in ["simulate", "identify", "validate", "estimate"] {
        run_ok(&[cmd, "--config", "linear", "--out", out]);
        let m = manifest(dir.path(), cmd);
        assert_eq!(m["command"], cmd);
        assert_eq!(m["seed"], 7);
        for artifact in m["artifacts"].as_array().unwrap() {
            assert!(dir.path().join(artifact.as_str().unwrap()).exists());
        }
    }
    for name in [
        "train.csv",
        "model.json",
        "model.json.meta.json",
        "prediction.csv",
        "estimate.csv",
        "summary.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let head = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    assert!(head.starts_with("# kdmhe-estimate v1\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["rmse"].as_f64().unwrap() < 0.05);
}

#[test]
fn same_seed_same_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        run_ok(&[
            "report",
            "--config",
            "linear",
            "--seed",
            "7",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_str().unwrap();
        if name.starts_with("timing") || name.ends_with("summary.json") {
            continue;
        }
        let left = std::fs::read(a.path().join(name)).unwrap();
        let right = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name}");
        compared += 1;
    }
    assert!(compared >= 8);
}

#[test]
fn seed_override_changes_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_ok(&[
        "simulate",
        "--config",
        "linear",
        "--out",
        a.path().to_str().unwrap(),
    ]);
    run_ok(&[
        "simulate",
        "--config",
        "linear",
        "--seed",
        "8",
        "--out",
        b.path().to_str().unwrap(),
    ]);
    let left = std::fs::read(a.path().join("train.csv")).unwrap();
    let right = std::fs::read(b.path().join("train.csv")).unwrap();
    assert_ne!(left, right);
    assert_eq!(manifest(b.path(), "simulate")["seed"], 8);
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["simulate", "--config", "linear", "--out", out]);
    let config = dir.path().join("config.toml");
    let other = dir.path().join("again");
    run_ok(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(dir.path().join("train.csv")).unwrap(),
        std::fs::read(other.join("train.csv")).unwrap()
    );
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        kdmhe(&["simulate", "--config", "no-such-preset", "--out", out])
            .status
            .code(),
        Some(1)
    );

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "name = 3\n[estimator\n").unwrap();
    assert_eq!(
        kdmhe(&[
            "simulate",
            "--config",
            broken.to_str().unwrap(),
            "--out",
            out
        ])
        .status
        .code(),
        Some(1)
    );

    assert_eq!(
        kdmhe(&[
            "simulate",
            "--config",
            "linear",
            "--threads",
            "0",
            "--out",
            out
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(kdmhe(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kdmhe(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = kdmhe(&[
        "estimate",
        "--config",
        "linear",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
