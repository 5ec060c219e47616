mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn habitat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_habitat"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HABITAT_LLM_BASE_URL")
        .env_remove("HABITAT_LLM_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

#[test]
fn stages_chain_through_persisted_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    common::copy_fixtures(tmp.path());
    let dir = tmp.path();
    for stage in ["identify", "fetch", "sample", "extract", "discover", "infer", "explain"] {
        let out = habitat(&[stage, "--config", "config.json"], dir);
        assert_eq!(out.status.code(), Some(0), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = habitat(&["run", "--config", "config.json"], dir);
    assert_eq!(run.status.code(), Some(0));
    let report_path = stdout(&run);
    let run_dir = Path::new(&report_path).parent().unwrap();
    let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let effects: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("effects.json")).unwrap()).unwrap();
    assert_eq!(report["effects"], effects);
}

#[test]
fn stage_without_inputs_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    common::copy_fixtures(tmp.path());
    let out = habitat(&["infer", "--config", "config.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("habitat discover"));
}

#[test]
fn exit_codes_follow_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    common::copy_fixtures(tmp.path());
    let dir = tmp.path();
    let missing = habitat(&["run", "--config", "nope.json"], dir);
    assert_eq!(missing.status.code(), Some(2));
    let uncached = habitat(&["run", "--config", "config.json", "--species", "Quercus robur"], dir);
    assert_eq!(uncached.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&uncached.stderr).contains("species/match?name=Quercus+robur"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    common::copy_fixtures(tmp.path());
    let out = habitat(&["run", "--config", "config.json", "--seed", "11", "--offline"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(stdout(&out)).unwrap()).unwrap();
    assert_eq!(report["provenance"]["seed"], 11);
}

#[test]
fn synth_prints_table_and_writes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, r#"{"d": 5, "expected_edges": 4, "n": 500, "presence_coeffs": {"0": 1.0}, "seed": 3}"#).unwrap();
    let out = habitat(
        &["synth", "--spec", "spec.json", "--trials", "3", "--n-mc", "20000", "--bootstrap", "50", "--out", "res.json"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.lines().next().unwrap().contains("shd"));
    assert!(table.contains("mean SHD"));
    let res: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("res.json")).unwrap()).unwrap();
    assert_eq!(res["trials"].as_array().unwrap().len(), 3);
    assert!(res["coverage"].is_number());
}

#[test]
fn invalid_synth_spec_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("spec.json"), r#"{"d": 1}"#).unwrap();
    let out = habitat(&["synth", "--spec", "spec.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
