use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use snapcube::geometry::{EquirectImage, EquirectMask};
use snapcube::io;

fn snapcube(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snapcube")).args(args).env("SNAPCUBE_LOG", "info").output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, seed: u64) -> Value {
    json(&snapcube(&[
        "synth",
        "--out-dir",
        s(dir),
        "--count",
        &count.to_string(),
        "--height",
        "32",
        "--seed",
        &seed.to_string(),
    ]))
}

#[test]
fn synth_writes_the_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), 10, 1);
    assert_eq!(out["entries"], 10);
    let manifest: Vec<Value> = io::read_json(dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.len(), 10);
}

#[test]
fn eval_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6, 2);
    let report_path = dir.path().join("report.json");
    let out = json(&snapcube(&[
        "eval",
        "--manifest",
        s(&dir.path().join("manifest.json")),
        "--policies",
        "exhaustive,uniform",
        "--budgets",
        "1,2,4",
        "--face-size",
        "16",
        "--seed",
        "0",
        "--out",
        s(&report_path),
        "--jobs",
        "2",
    ]));
    let rows = out["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.get("seconds_per_evaluation").is_none()));
    assert!(report_path.exists() && report_path.with_extension("csv").exists());
}

#[test]
fn snap_policies_report_expected_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let mask = EquirectMask::from_fn(64, 32, |c| c.lon.abs() < 0.5 && c.lat.abs() < 0.4).unwrap();
    let mask_path = dir.path().join("mask.png");
    io::save_mask(&mask, &mask_path).unwrap();

    let ex = json(&snapcube(&["snap", "--mask", s(&mask_path), "--face-size", "16", "--policy", "exhaustive"]));
    assert_eq!(ex["budget_used"], 20);

    let uni = json(&snapcube(&["snap", "--mask", s(&mask_path), "--face-size", "16", "--policy", "uniform", "--budget", "1"]));
    assert_eq!(uni["best_angle"]["theta"].as_f64(), Some(0.0));

    let args = ["snap", "--mask", s(&mask_path), "--face-size", "16", "--policy", "random", "--budget", "3", "--seed", "5"];
    assert_eq!(snapcube(&args).stdout, snapcube(&args).stdout);
}

#[test]
fn omitted_seed_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mask_path = dir.path().join("mask.png");
    io::save_mask(&EquirectMask::from_fn(64, 32, |c| c.lon > 0.0).unwrap(), &mask_path).unwrap();
    let out = snapcube(&["snap", "--mask", s(&mask_path), "--face-size", "16", "--policy", "random"]);
    let v = json(&out);
    assert!(v["seed"].is_u64());
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("seed: {}", v["seed"])));
}

#[test]
fn score_of_full_foreground_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let mask_path = dir.path().join("ones.png");
    io::save_mask(&EquirectMask::new(64, 32, vec![1; 64 * 32]).unwrap(), &mask_path).unwrap();
    let v = json(&snapcube(&["score", "--mask", s(&mask_path), "--face-size", "16", "--theta", "30deg"]));
    assert_eq!(v["score"].as_f64(), Some(1.0));
}

#[test]
fn project_accepts_degrees_and_radians() {
    let dir = tempfile::tempdir().unwrap();
    let img = EquirectImage::from_fn(64, 32, 3, |c, ch| ((c.lon + ch as f64).sin() * 0.5 + 0.5) as f32).unwrap();
    let pano = dir.path().join("pano.png");
    io::save_equirect(&img, &pano).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let va = json(&snapcube(&["project", "--input", s(&pano), "--theta", "45deg", "--out-dir", s(&a), "--face-size", "16"]));
    json(&snapcube(&["project", "--input", s(&pano), "--theta", "0.7853981634rad", "--out-dir", s(&b), "--face-size", "16"]));
    let files = va["files"].as_array().unwrap();
    assert_eq!(files.len(), 7);
    for f in files {
        let name = Path::new(f.as_str().unwrap()).file_name().unwrap();
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
}

#[test]
fn missing_input_is_an_io_error_naming_the_path() {
    let out = snapcube(&["project", "--input", "/nonexistent/pano.png", "--out-dir", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/pano.png"));
    assert!(out.stdout.is_empty());
}

#[test]
fn config_errors_are_listed_together() {
    let out = snapcube(&["score", "--mask", "m.png", "--n-grid", "0", "--face-size", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--n-grid") && err.contains("--face-size"), "{err}");

    let out = snapcube(&["snap", "--mask", "m.png", "--policy", "learned"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(snapcube(&["snap", "--mask", "m.png", "--policy", "sideways"]).status.code(), Some(2));
}

#[test]
fn train_with_zero_learning_rate_logs_a_flat_curve() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 12, 3);
    let out_dir = dir.path().join("run");
    let v = json(&snapcube(&[
        "train",
        "--manifest",
        s(&dir.path().join("manifest.json")),
        "--out-dir",
        s(&out_dir),
        "--face-size",
        "16",
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--lr",
        "0",
        "--seed",
        "1",
        "--val-fraction",
        "0.3",
    ]));
    assert_eq!(v["seed"], 1);
    let log = std::fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    let curves: Vec<Value> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["mean_val_objective"].clone()).collect();
    assert_eq!(curves.len(), 3);
    assert!(curves.iter().all(|c| c == &curves[0]));
    assert!(out_dir.join("weights.snap").exists());

    let weights = out_dir.join("weights.snap");
    let learned = json(&snapcube(&[
        "eval",
        "--manifest",
        s(&dir.path().join("manifest.json")),
        "--policies",
        "learned",
        "--budgets",
        "2",
        "--weights",
        s(&weights),
        "--face-size",
        "16",
        "--seed",
        "2",
    ]));
    assert_eq!(learned["rows"].as_array().unwrap().len(), 1);
}
