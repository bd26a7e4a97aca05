use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn lnpde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lnpde"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lnpde(args);
    assert!(
        out.status.success(),
        "lnpde {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Twelve advection trajectories split 6/3/3 and a short schedule.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "preset": "advection-fixed",
        "dataset": {
            "per_param": 12,
            "split": {"train": {"start": 0, "end": 6}, "val": {"start": 6, "end": 9}, "test": {"start": 9, "end": 12}}
        },
        "plan": {"batch_size": 3, "max_epochs": 3, "warmup_epochs": 0, "dynamics_off_epochs": 0}
    });
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_byte_identical_for_the_same_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen", "--config", s(&cfg), "--seed", "3", "--out", s(&a)]);
    ok(&["gen", "--config", s(&cfg), "--seed", "3", "--out", s(&b)]);
    for f in ["train.lnds", "val.lnds", "test.lnds"] {
        assert!(fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let (mut c, mut d) = (read_json(&a.join("config.json")), read_json(&b.join("config.json")));
    c.as_object_mut().unwrap().remove("out");
    d.as_object_mut().unwrap().remove("out");
    assert_eq!(c, d);
    assert_eq!(c["data_seed"], 3);
    assert_eq!(c["dataset"]["per_param"], 12);
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("data");
    ok(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    let again = lnpde(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["gen", "--config", s(&cfg), "--out", s(&out), "--force"]);
}

#[test]
fn invalid_input_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert!(!lnpde(&["train", "--rk-stage", "7", "--out", s(&out)]).status.success());
    assert!(!lnpde(&["gen", "--preset", "heat", "--out", s(&out)]).status.success());
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"learning_rate": 0.1}"#).unwrap();
    let r = lnpde(&["gen", "--config", s(&bad), "--out", s(&out)]);
    assert!(!r.status.success());
    assert!(!out.exists(), "failed command left output behind");
    let r = Command::new(env!("CARGO_BIN_EXE_lnpde"))
        .args(["gen", "--out", s(&out)])
        .env("LNPDE_THREADS", "0")
        .output()
        .unwrap();
    assert!(!r.status.success());
}

#[test]
fn train_resume_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["gen", "--config", s(&cfg), "--out", s(&data)]);

    let full = tmp.path().join("full");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--epochs", "4", "--out", s(&full)]);
    let part = tmp.path().join("part");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--epochs", "2", "--out", s(&part)]);
    ok(&["train", "--resume", "--epochs", "4", "--out", s(&part)]);

    let log = fs::read_to_string(part.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert_eq!(log, fs::read_to_string(full.join("log.csv")).unwrap());
    assert!(fs::read(part.join("last.ckpt")).unwrap() == fs::read(full.join("last.ckpt")).unwrap());
    let c = read_json(&part.join("config.json"));
    assert_eq!(c["plan"]["max_epochs"], 4);

    // a non-empty run directory is not silently reused
    let r = lnpde(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&full)]);
    assert!(!r.status.success());

    let out = ok(&["eval", "--run", s(&full), "--dt-factors", "1,5"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains('5'), "{text}");
    let ev = full.join("eval");
    for f in ["nrmse.csv", "box.csv", "summary.json", "nrmse.svg", "config.json"] {
        assert!(ev.join(f).exists(), "{f}");
    }
    let summary = read_json(&ev.join("summary.json"));
    assert!(summary.to_string().contains("nrmse"));
}

#[test]
fn ablation_over_l3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("abl");
    ok(&["ablate", "--axis", "l3", "--config", s(&cfg), "--epochs", "2", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    // per-time rows for 2 variants at factors 1 and 5 over 40 intervals
    assert_eq!(csv.lines().count(), 1 + 2 * (40 + 5 * 40));
    assert!(out.join("runs/l3-0/best.ckpt").exists() && out.join("runs/l3-1/best.ckpt").exists());
    assert!(out.join("ablation.json").exists());
    assert!(out.join("ablation.svg").exists());
    assert!(out.join("config.json").exists());
}
