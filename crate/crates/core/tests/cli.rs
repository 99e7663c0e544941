use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hc_core::harness::{ExperimentConfig, LOCK_FILE};

fn hc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hc")).args(args).output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)))
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

#[test]
fn shipped_config_is_the_default() {
    let shipped = ExperimentConfig::load(&shipped_config()).unwrap();
    assert_eq!(shipped, ExperimentConfig::default());
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = shipped_config();
    let args = ["gen", "--config", config.to_str().unwrap(), "--seed", "3", "--out", out];
    assert!(hc(&args).status.success());
    let first = fs::read(dir.path().join("seed-3/corpus.txt")).unwrap();
    assert!(hc(&args).status.success());
    assert_eq!(fs::read(dir.path().join("seed-3/corpus.txt")).unwrap(), first);
    assert!(String::from_utf8_lossy(&first).contains("seed=3"));
    assert!(!dir.path().join(LOCK_FILE).exists());
}

#[test]
fn classify_without_a_checkpoint_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(hc(&["gen", "--seed", "2", "--out", out]).status.success());
    let res = hc(&["classify", "--seed", "2", "--out", out]);
    assert_eq!(res.status.code(), Some(4));
    let err = error_json(&res);
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["path"].as_str().unwrap().ends_with("seed-2/hierarchy/manifest.json"), "{err}");
}

#[test]
fn malformed_config_exits_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"task": {"noise_rate": 0.9}}"#).unwrap();
    let res = hc(&["gen", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_json(&res)["error"], "invalid_task");

    let res = hc(&["gen", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn a_held_lock_blocks_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(LOCK_FILE), "1").unwrap();
    let res = hc(&["gen", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(error_json(&res)["error"], "locked");
}
