use std::path::Path;
use std::process::Command;

use bm_lab::{emit_report, parse_config, run_scenario, CliError, Task};
use bmlab::BmError;
use serde_json::{json, Value};

fn bin(task: &str, config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_bm-lab"))
        .args([task, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn write(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn small_norm() -> Value {
    json!({
        "field": {"kind": "indicator", "j": 0, "k": [0], "direction": [[1.0, 0.0]]},
        "params": {"p": 1.0, "t": 2.0, "r": 4.0},
        "window": {"j_min": -2, "j_max": 4, "spatial_radius": 1.0, "n": 1}
    })
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let empty = json!({
        "params": {"p": 1.0, "t": 2.0, "r": 4.0},
        "family": {"kind": "members", "members": []}
    });
    assert_eq!(bin("compactness", &write(dir.path(), "empty.json", &empty), &out), 2);
    let mut unknown = small_norm();
    unknown["colour"] = json!("blue");
    assert_eq!(bin("norm", &write(dir.path(), "unknown.json", &unknown), &out), 2);
    let mut bad_params = small_norm();
    bad_params["params"] = json!({"p": 2.0, "t": 1.0, "r": 4.0});
    assert_eq!(bin("norm", &write(dir.path(), "params.json", &bad_params), &out), 2);
    let mut mismatch = small_norm();
    mismatch["task"] = json!("reduce");
    assert_eq!(bin("norm", &write(dir.path(), "mismatch.json", &mismatch), &out), 2);
    let missing_window = json!({"field": small_norm()["field"], "params": small_norm()["params"]});
    assert_eq!(bin("norm", &write(dir.path(), "nowindow.json", &missing_window), &out), 2);
    assert_eq!(bin("norm", &dir.path().join("absent.json"), &out), 2);
    assert!(!out.join("report.json").exists());
}

#[test]
fn error_classes_map_to_exit_codes() {
    assert_eq!(CliError::from(BmError::NotConverged { what: "mvee", iterations: 3 }).exit_code(), 3);
    assert_eq!(CliError::from(BmError::InvalidInput("x".into())).exit_code(), 2);
    assert_eq!(CliError::from(BmError::Hypothesis("x".into())).exit_code(), 2);
}

#[test]
fn norm_report_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(bin("norm", &write(dir.path(), "norm.json", &small_norm()), &out), 0);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "ok");
    assert_eq!(report["task"], "norm");
    assert_eq!(report["config"]["task"], "norm");
    assert_eq!(report["config"]["field"], small_norm()["field"]);
    assert!(report["version"].as_str().is_some_and(|v| !v.is_empty()));
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    // terms go to CSV only
    assert!(report["result"]["norm"].get("terms").is_none());
    let terms = std::fs::read_to_string(out.join("norm_terms.csv")).unwrap();
    assert_eq!(terms.lines().next(), Some("j,k_hash,term"));
    let per_scale = std::fs::read_to_string(out.join("norm_per_scale.csv")).unwrap();
    assert_eq!(per_scale.lines().next(), Some("j,value"));
    assert_eq!(per_scale.lines().count(), 1 + 7);
    assert_eq!(report["csv_files"], json!(["norm_per_scale.csv", "norm_terms.csv"]));
}

#[test]
fn reports_are_repeatable_and_hash_tracks_config() {
    let cfg = parse_config(&small_norm().to_string()).unwrap();
    let a = run_scenario(Task::Norm, cfg.clone(), None).unwrap();
    let b = run_scenario(Task::Norm, cfg.clone(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&a, &dir.path().join("a")).unwrap();
    emit_report(&b, &dir.path().join("b")).unwrap();
    for f in ["report.json", "norm_terms.csv", "norm_per_scale.csv"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let mut changed = small_norm();
    changed["window"]["j_max"] = json!(5);
    let c = run_scenario(Task::Norm, parse_config(&changed.to_string()).unwrap(), None).unwrap();
    assert_ne!(a.report.config_hash, c.report.config_hash);
    let seeded = run_scenario(Task::Norm, cfg, Some(9)).unwrap();
    assert_ne!(a.report.config_hash, seeded.report.config_hash);
    assert_eq!(seeded.report.config["seed"], json!(9));
}

#[test]
fn compactness_writes_one_csv_per_curve() {
    let cfg = json!({
        "params": {"p": 1.0, "t": 2.0, "r": 4.0},
        "family": {"kind": "members", "members": [
            {"id": "a", "field": {"kind": "gaussian", "center": [0.0], "scale": 0.3, "direction": [[1.0, 0.0]]}},
            {"id": "b", "field": {"kind": "gaussian", "center": [0.2], "scale": 0.3, "direction": [[1.0, 0.0]]}}
        ]},
        "schedule": {"radii": [1.0, 2.0, 4.0], "a_values": [-2, -4, -6]}
    });
    let out = run_scenario(Task::Compactness, parse_config(&cfg.to_string()).unwrap(), None).unwrap();
    let names: Vec<&str> = out.csvs.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["compactness_tail.csv", "compactness_modulus.csv", "compactness_nets.csv"]);
    assert_eq!(out.csvs[0].header, ["param", "sup", "a", "b"]);
    assert_eq!(out.csvs[0].rows.len(), 3);
    let c = &out.report.result["compactness"];
    assert_eq!(c["verdict"], "certified-totally-bounded-at-epsilon");
    assert!(c["statement"].as_str().unwrap().starts_with("certified at schedule"));
    assert!(c["thresholds"]["plateau_spread"].is_number());
}

#[test]
fn apclass_values_are_numbers_or_inf() {
    // the dual weight |x|^{-2} is not integrable near 0 in one dimension
    let cfg = json!({
        "weight": {"family": "scalar_power", "params": {"gamma": 2.0}, "d": 1, "n": 1},
        "apclass": {"p": 2.0, "shrinking": {"corner": [0.0], "j_min": 0, "j_max": 2}, "dimension": false}
    });
    let out = run_scenario(Task::Apclass, parse_config(&cfg.to_string()).unwrap(), None).unwrap();
    let text = bm_lab::canonical::to_string(&out.report).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    for cube in v["result"]["shrinking"]["per_cube"].as_array().unwrap() {
        let value = &cube["value"];
        assert!(value.is_number() || value == "inf", "{value}");
    }
}
