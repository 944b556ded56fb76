//! The command-line front end.

use std::process::Command;

fn rcmtwin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rcmtwin"));
    c.env("RCMTWIN_LOG", "warn");
    c
}

#[test]
fn bench_run_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let trace = dir.path().join("trace.csv");
    let out = rcmtwin()
        .args(["bench", "run", "--shape", "cone", "--out"])
        .arg(&report)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["shape"], "cone");
    assert_eq!(json["pass"], true);
    for k in ["tracking_max", "tracking_rmse", "rcm_max", "rcm_rmse", "n_samples"] {
        assert!(json[k].is_number(), "{k} missing from {json}");
    }
    let csv = std::fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("tick,time_s,arm,"));
    assert_eq!(lines.count() as u64, json["n_samples"].as_u64().unwrap());
}

#[test]
fn bad_configuration_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("workspace.json");
    std::fs::write(&ws, "{\"holes\": 3}").unwrap();
    let out = rcmtwin().args(["bench", "run", "--shape", "pyramid", "--config"]).arg(&ws).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn drills_report_ok() {
    let out = rcmtwin().args(["drill", "unreachable"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("-> ok"));
}
