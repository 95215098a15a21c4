//! Exit-code and output contract of the `metastab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metastab"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("metastab-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(out_dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn validate_echoes_the_normalized_config() {
    let dir = scratch("validate");
    let cfg = write(&dir, "c.txt", "experiment condensation\nkappa 2\nN 30\nseed 5\n");
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("experiment condensation"));
    assert!(text.contains("N 30"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_config_exits_two_and_reports_every_violation() {
    let dir = scratch("invalid");
    let cfg = write(&dir, "c.txt", "experiment condensation\nkappa 1\nN 30\nN 20\nseed 5\n");
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("kappa must be at least 2"), "kappa violation reported: {err}");
    assert!(err.contains("strictly increasing"), "grid violation reported: {err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn run_writes_csv_and_manifest_and_exits_zero() {
    let dir = scratch("run");
    let cfg = write(&dir, "c.txt", "experiment condensation\nkappa 2\nN 30\nN 40\nseed 5\n");
    let out_dir = dir.join("out");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("condensation.csv")).unwrap();
    assert!(csv.starts_with("N,mu_E_total,mu_Delta,"));
    assert_eq!(csv.lines().count(), 3, "header plus one row per grid size");
    let m = manifest(&out_dir);
    assert_eq!(m["experiment"], "condensation");
    assert_eq!(m["cells"].as_array().unwrap().len(), 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn failed_cells_keep_the_run_alive_but_exit_one() {
    // N = 3 has overlapping wells; N = 30 is fine. The run must finish,
    // keep the good row, record the bad cell, and signal partial failure.
    let dir = scratch("partial");
    let cfg = write(&dir, "c.txt", "experiment condensation\nkappa 2\nN 3\nN 30\nseed 5\n");
    let out_dir = dir.join("out");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("condensation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "header plus the surviving row");
    let cells = manifest(&out_dir)["cells"].as_array().unwrap().clone();
    let failed = cells.iter().filter(|c| c["status"] == "failed").count();
    let ok = cells.iter().filter(|c| c["status"] == "ok").count();
    assert_eq!((failed, ok), (1, 1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_experiment_exits_two_and_lists_the_names() {
    let dir = scratch("badname");
    let cfg = write(&dir, "c.txt", "experiment nonsense\nkappa 2\nN 30\n");
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("condensation"), "usage should list valid names");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unreadable_file_exits_two() {
    let out = bin().arg("validate").arg("/nonexistent/nowhere.txt").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chain_info_describes_an_instance() {
    let dir = scratch("info");
    let spec = write(&dir, "m.txt", "kappa 2\nwalk_rate 0 1 1\nspeedup on\n");
    let out = bin().arg("chain-info").arg(&spec).arg("--n").arg("40").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("configurations: 41"));
    assert!(text.contains("partition function"));
    std::fs::remove_dir_all(&dir).ok();
}
