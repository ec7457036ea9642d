use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_nwadapt");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("NWADAPT_THREADS", "2").output().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap()
}

fn synth(dir: &Path) {
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--deterministic",
        "--per-class",
        "12",
        "--test-per-class",
        "4",
        "--hw",
        "16",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_2_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let out = run(&["adapt", "--data", "nowhere", "--out", out_dir.to_str().unwrap(), "--prune-budget", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
    assert!(!out_dir.exists());

    let out = run(&["adapt", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");

    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"lr": 0.1}}"#).unwrap();
    let out = run(&["stats", "--data", "x", "--out", out_dir.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["stats", "--data", tmp.path().to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("manifest"));
}

#[test]
fn identity_prune_reproduces_model_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let d = data.to_str().unwrap();
    let ft = tmp.path().join("ft");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"max_epochs": 1}}"#).unwrap();
    let out = run(&[
        "finetune", "--data", d, "--out", ft.to_str().unwrap(), "--deterministic", "--preset", "desk", "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = ft.join("model.nwad");

    let first = tmp.path().join("p1");
    let out = run(&["prune-once", "--data", d, "--model", model.to_str().unwrap(), "--out", first.to_str().unwrap(), "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut decision: Value = serde_json::from_slice(&std::fs::read(first.join("decision.json")).unwrap()).unwrap();
    for layer in decision["layers"].as_array_mut().unwrap() {
        let k = layer["K"].as_u64().unwrap() as usize;
        layer["mask"] = Value::String("1".repeat(k));
        layer["kept"] = k.into();
    }
    let ones = tmp.path().join("ones.json");
    std::fs::write(&ones, serde_json::to_vec(&decision).unwrap()).unwrap();
    let second = tmp.path().join("p2");
    let out = run(&[
        "prune-once", "--data", d, "--model", model.to_str().unwrap(), "--out", second.to_str().unwrap(),
        "--deterministic", "--decision", ones.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(second.join("pruned.nwad")).unwrap());
    let manifest: Value = serde_json::from_slice(&std::fs::read(second.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["created_unix"], 0);
    assert_eq!(manifest["command"], "prune-once");
}

#[test]
fn adapt_writes_reports_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"max_epochs": 3}, "adapt": {"stats_batch_size": 16}}"#).unwrap();
    let go = |name: &str| {
        let dir = tmp.path().join(name);
        let out = run(&[
            "adapt", "--data", data.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--deterministic", "--preset",
            "desk", "--config", cfg.to_str().unwrap(), "--iterations", "2", "--prune-budget", "0.1",
            "--exclude-layers", "conv1", "--keep-snapshots", "--seed", "4",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let (a, b) = (go("a"), go("b"));
    for f in ["report.json", "curves.csv", "widths.csv", "best_model.nwad", "run_manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
        if f != "run_manifest.json" {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
    }
    assert!(a.join("snapshots/iter_02.nwad").exists());
    let curves = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.starts_with("iteration,val_acc,test_acc,params,flops,params_ratio,flops_ratio\n"));
    let widths = std::fs::read_to_string(a.join("widths.csv")).unwrap();
    for line in widths.lines().skip(1) {
        assert!(line.split(',').nth(1) == Some("8"), "conv1 is excluded: {line}");
    }

    let rep = tmp.path().join("rep");
    let out = run(&["report", "--report", a.join("report.json").to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(rep.join("curves.csv")).unwrap(), curves);
    assert!(std::fs::read_to_string(rep.join("summary.md")).unwrap().contains("| iter |"));

    let ev = tmp.path().join("ev");
    let out = run(&[
        "eval", "--data", data.to_str().unwrap(), "--model", a.join("best_model.nwad").to_str().unwrap(), "--out",
        ev.to_str().unwrap(), "--split", "val",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: Value = serde_json::from_slice(&std::fs::read(ev.join("eval.json")).unwrap()).unwrap();
    let report: Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    let best = report["best_iteration"].as_u64().unwrap() as usize;
    assert_eq!(eval["single_crop_accuracy"], report["rows"][best]["val_accuracy"]);
}

#[test]
fn stats_output_follows_layer_order() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out_dir = tmp.path().join("s");
    let out = run(&["stats", "--data", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("profile.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["conv1", "conv2", "fc1"]);
    assert!(text.find("conv1").unwrap() < text.find("fc1").unwrap());
}
