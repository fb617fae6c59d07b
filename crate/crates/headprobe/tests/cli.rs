mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::tree;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headprobe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

const SPEC: &str = r#"{
  "n_layers": 2, "n_heads": 2, "head_dim": 6, "seed": 4,
  "prompts": [{"id": 1, "n_essays": 60}, {"id": 2, "n_essays": 60}, {"id": 7, "n_essays": 40}],
  "ranges": [
    {"prompt_id": 1, "trait": "holistic", "min_score": 0, "max_score": 4},
    {"prompt_id": 2, "trait": "holistic", "min_score": 0, "max_score": 4},
    {"prompt_id": 7, "trait": "holistic", "min_score": 0, "max_score": 30}
  ],
  "planted": [{"layer": 1, "head": 0, "trait": "holistic", "sigma": 0.05}]
}"#;

fn synth(dir: &Path) {
    std::fs::write(dir.join("spec.json"), SPEC).unwrap();
    let o = bin(&["synth", "--spec", "spec.json", "--out", "data"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_and_directions_end_to_end_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for out in ["r1", "r8"] {
        let workers = if out == "r1" { "1" } else { "8" };
        let o = bin(
            &[
                "sweep", "--config", "data/run.json", "--exclude-train-prompt", "7", "--out", out, "--workers", workers,
            ],
            d,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("L1H0"));
        let o = bin(&["directions", "--config", "data/run.json", "--out", out, "--workers", workers], d);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(tree(&d.join("r1")), tree(&d.join("r8")));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r1/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["excluded_train_prompts"], serde_json::json!([7]));
    let p7 = m["splits"].as_array().unwrap().iter().find(|s| s["test_prompt"] == 7).unwrap();
    assert_eq!(p7["n_test"], 40);
    for s in m["splits"].as_array().unwrap() {
        assert!(s["train_prompts"].get("7").is_none());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    // Missing config file: config error.
    assert_eq!(bin(&["sweep", "--config", "nope.json"], d).status.code(), Some(2));
    // Bad lambda: config error.
    assert_eq!(
        bin(&["sweep", "--config", "data/run.json", "--lambda", "-1"], d).status.code(),
        Some(2)
    );
    // LAST-mode dump for token report: data error with guidance.
    let o = bin(
        &["token-report", "--config", "data/run.json", "--essay", "p1_e0000", "--trait", "holistic"],
        d,
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("LAST mode"));
    // Corrupt dump: data error.
    std::fs::write(d.join("bad.dump"), b"ACTVgarbage").unwrap();
    assert_eq!(bin(&["inspect", "bad.dump"], d).status.code(), Some(3));
    // Invalid synth spec: config error.
    std::fs::write(d.join("bad_spec.json"), SPEC.replace("\"layer\": 1", "\"layer\": 5")).unwrap();
    assert_eq!(
        bin(&["synth", "--spec", "bad_spec.json", "--out", "x"], d).status.code(),
        Some(2)
    );
}

#[test]
fn inspect_prints_geometry() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = bin(&["inspect", "data/activations.dump"], dir.path());
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("2 layers x 2 heads x 6 dims"), "{s}");
    assert!(s.contains("size check:    ok"));
    assert!(s.contains("\"example_ids\""));
}

#[test]
fn protocol_and_probe_flags_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = bin(
        &["sweep", "--config", "data/run.json", "--protocol", "held-out", "--seed", "12", "--out", "h"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("h/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["protocol"], "held-out");
    assert_eq!(m["seed"], 12);
    assert_eq!(m["config"]["mlp"]["seed"], 12);
}
