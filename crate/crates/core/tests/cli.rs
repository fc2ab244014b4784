//! Command-line behavior: exit codes, config handling and written files.

use std::path::Path;
use std::process::{Command, Output};

use nfisac::harness::{ResultRecord, RunConfig};

const SMALL: &str = "\
[array]
elements = 4
[scene]
users = 10@112.5
targets = 5@90
symbols = 2
[music]
angle_points = 20
range_points = 20
trials = 3
[beampattern]
angle_step_deg = 2
range_step = 1
";

fn nfisac(args: &[&str], dir: &Path) -> Output {
    let cfg = dir.join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    Command::new(env!("CARGO_BIN_EXE_nfisac"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn defaults_print_a_parseable_config() {
    let out = Command::new(env!("CARGO_BIN_EXE_nfisac"))
        .arg("defaults")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[array]\nelements = 4\nwavelength = -1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nfisac"))
        .args(["design", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(stderr(&out).contains("wavelength"), "{}", stderr(&out));
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.cfg");
    std::fs::write(&cfg, "[scene]\nuser = 10@90\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nfisac"))
        .args(["design", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_nfisac"))
        .args(["design", "--config"])
        .arg(dir.path().join("absent.cfg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn weight_outside_unit_interval_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = nfisac(&["design", "--rho", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn design_writes_block_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = nfisac(&["design", "--rho", "0.5", "--precoder", "blp"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("out/design.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("slot,element,re,im"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    let record: ResultRecord = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(record.experiment, "design");
    assert_eq!(RunConfig::parse(&record.inputs).unwrap().design.rho, 0.5);
}

#[test]
fn sweep_writes_one_row_per_weight_and_precoder() {
    let dir = tempfile::tempdir().unwrap();
    let out = nfisac(&["sweep", "--rho-grid", "0:0.5:1"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("out/tradeoff.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for precoder in ["slp", "blp"] {
        for rho in ["0", "0.5", "1"] {
            let prefix = format!("{rho},{precoder},");
            assert_eq!(
                rows.iter().filter(|r| r.starts_with(&prefix)).count(),
                1,
                "{prefix}"
            );
        }
    }
}

#[test]
fn records_accumulate_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        let out = nfisac(&["beampattern"], dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let lines = std::fs::read_to_string(dir.path().join("out/records.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    let csv = std::fs::read_to_string(dir.path().join("out/beampattern.csv")).unwrap();
    assert!(csv.lines().skip(1).any(|l| l.ends_with(",0")));
}

#[test]
fn monte_carlo_rows_per_trial_and_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = nfisac(&["mc", "--trials", "3", "--seed", "5"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("out/mc_trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
}
