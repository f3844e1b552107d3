//! Runs the `mmw-slam` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mmw-slam"));
    c.env("RUST_LOG", "warn");
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("MMWSLAM_")) {
        c.env_remove(k);
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "run",
            "--mode",
            "los-only",
            "--seed",
            "7",
            "--nmc",
            "1",
            "--particles",
            "50",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert!(fa.iter().any(|(n, _)| n == "states.csv"));
    assert_eq!(fa, fb);
}

#[test]
fn metrics_aggregate_the_requested_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--mode",
        "prediction-only",
        "--nmc",
        "5",
        "--particles",
        "200",
        "--format",
        "csv,json",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let runs = header.iter().position(|h| *h == "runs").unwrap();
    assert!(lines.all(|l| l.split(',').nth(runs) == Some("5")));
    let states = std::fs::read_to_string(tmp.path().join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 1 + 5 * 40 * 2);
    assert!(tmp.path().join("states.json").exists());
    assert!(tmp.path().join("summary.json").exists());
}

#[test]
fn validate_lists_field_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.toml");
    std::fs::write(&good, "").unwrap();
    let o = run(&["validate", "--config", good.to_str().unwrap()]);
    assert!(o.status.success());

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[detection]\nr_fov_m = -1.0\n\n[filter]\nmerge_threshold = 0.0\n").unwrap();
    let o = run(&["validate", "--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("detection.r_fov_m"), "{err}");
    assert!(err.contains("filter.merge_threshold"), "{err}");

    let o = run(&[
        "run",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn env_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--out", tmp.path().to_str().unwrap()])
        .env("MMWSLAM_MODE", "prediction-only")
        .env("MMWSLAM_NMC", "1")
        .env("MMWSLAM_PARTICLES", "20")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(tmp.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"prediction-only\""), "{summary}");
    assert!(summary.contains("\"particles\": 20"), "{summary}");
}

#[test]
fn replay_confirms_recorded_fusion() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--mode",
        "fusion-ul",
        "--nmc",
        "1",
        "--particles",
        "40",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["replay", tmp.path().join("syncs.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 mismatches"));
}
