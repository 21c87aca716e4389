use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pulseqml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulseqml")).args(args).env_remove("PULSEQML_OUT").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn express_exit_codes_follow_the_verdict() {
    let tmp = TempDir::new().unwrap();
    let zero = tmp.path().join("zero");
    let out = pulseqml(&["express", "--model", "builtin:eq13", "--initial", "00", "--out", arg(&zero)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(zero.join("express.json")).unwrap()).unwrap();
    let failing: Vec<u64> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| !r["pass"].as_bool().unwrap())
        .map(|r| r["degree"][0].as_u64().unwrap())
        .collect();
    assert_eq!(failing, vec![1, 3, 5, 7]);

    let reference = tmp.path().join("reference");
    let out = pulseqml(&["express", "--model", "builtin:eq13", "--out", arg(&reference)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "x1,y\n").unwrap();
    let out = pulseqml(&[
        "train",
        "--model",
        "builtin:eq13",
        "--dataset",
        arg(&empty),
        "--iters",
        "2",
        "--out",
        arg(&tmp.path().join("run")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = pulseqml(&["lie", "--model", "builtin:9"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn lie_reports_uncontrollable_algebra_dimension() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("lie");
    let out = pulseqml(&["lie", "--model", "builtin:3", "--n", "6", "--out", arg(&dir)]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("lie.json")).unwrap()).unwrap();
    assert_eq!(report["algebra_dim"].as_u64(), Some(15));
    let v = report["variance"]["total"].as_f64().unwrap();
    assert!((v - 1.0 / 15.0).abs() < 1e-10, "{v}");

    let out = pulseqml(&["lie", "--model", "builtin:4", "--n", "2", "--max-dim", "2"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn training_is_reproducible_and_fully_listed() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = pulseqml(&[
            "train",
            "--model",
            "builtin:eq13",
            "--duration",
            "2",
            "--target",
            "eq14",
            "--points",
            "12",
            "--iters",
            "5",
            "--backend",
            "fd",
            "--seed",
            "7",
            "--out",
            arg(&dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let a = run("a");
    let b = run("b");

    let m = manifest(&a);
    let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|o| o.as_str().unwrap()).collect();
    for name in ["dataset.csv", "loss.csv", "fit.csv", "model.json", "record.json"] {
        assert!(listed.contains(&name), "{name} missing from {listed:?}");
    }
    for name in &listed {
        assert!(a.join(name).is_file(), "{name} listed but not written");
    }
    for name in ["dataset.csv", "loss.csv", "fit.csv", "model.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    assert_eq!(m["config_hash"], manifest(&b)["config_hash"]);
    assert_eq!(m["seed"].as_u64(), Some(7));

    let loss = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(loss.starts_with("iteration,loss\n"));
    assert!(loss.lines().count() >= 6);
}

#[test]
fn missed_target_loss_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = pulseqml(&[
        "train",
        "--model",
        "builtin:eq13",
        "--initial",
        "00",
        "--duration",
        "1",
        "--target",
        "eq14",
        "--points",
        "8",
        "--iters",
        "2",
        "--target-loss",
        "1e-6",
        "--out",
        arg(&tmp.path().join("run")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exported_model_round_trips() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("m2.json");
    let out = pulseqml(&["model", "export", "--model", "builtin:2", "--n", "3", "-o", arg(&first)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let second = tmp.path().join("again.json");
    let out = pulseqml(&["model", "export", "--model", arg(&first), "-o", arg(&second)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());

    let dir = tmp.path().join("lie");
    let out = pulseqml(&["lie", "--model", arg(&second), "--out", arg(&dir)]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("lie.json")).unwrap()).unwrap();
    assert_eq!(report["algebra_dim"].as_u64(), Some(9));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pulseqml"))
        .args(["dataset", "--target", "x1^2", "--m", "1", "--points", "5"])
        .env("PULSEQML_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("dataset").join("dataset.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x1,y"));
    assert_eq!(lines.count(), 5);
    assert!(tmp.path().join("dataset").join("manifest.json").is_file());

    let norm = tmp.path().join("norm");
    let out = pulseqml(&["dataset", "--target", "eq14", "--points", "9", "--normalize", "--out", arg(&norm)]);
    assert_eq!(code(&out), 0);
    let ys: Vec<f64> = fs::read_to_string(norm.join("dataset.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ys.iter().copied().fold(f64::INFINITY, f64::min), -1.0);
    assert_eq!(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
}
