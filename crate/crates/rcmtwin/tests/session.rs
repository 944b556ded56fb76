//! Headless replay of the recorded teleoperation session.

use std::path::Path;

use rcmtwin::config::TwinConfig;
use rcmtwin::session::{load_recording, parse_recording, play, Twin};
use rcmtwin_core::bench::evaluate;

fn recording() -> Vec<rcmtwin::session::RecordedCommand> {
    load_recording(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/teleop_session.jsonl")).unwrap()
}

#[test]
fn recorded_session_keeps_the_tool_in_the_hole() {
    let rec = recording();
    assert!(rec.len() > 100);
    let mut twin = Twin::new(&TwinConfig::default()).unwrap();
    let out = play(&mut twin, &rec, 125);
    assert!(out.rejected.is_empty(), "{:?}", out.rejected);
    assert!(out.events.is_empty(), "{:?}", out.events);
    let report = evaluate(&out.trace).unwrap();
    assert!(report.rcm_max <= 0.02, "rcm max {} mm", report.rcm_max);
    assert!(report.rcm_rmse <= 0.01, "rcm rmse {} mm", report.rcm_rmse);
    assert!((out.rcm.max * 1e3 - report.rcm_max).abs() < 1e-12);
}

#[test]
fn recorded_session_moves_both_arms() {
    let cfg = TwinConfig::default();
    let mut twin = Twin::new(&cfg).unwrap();
    let start = twin.snapshot(None, None);
    play(&mut twin, &recording(), 125);
    let end = twin.snapshot(None, None);
    for i in 0..2 {
        let moved: f64 = (0..3).map(|k| (end.arms[i].tip[k] - start.arms[i].tip[k]).powi(2)).sum::<f64>().sqrt();
        assert!(moved > 1e-3, "arm {i} moved {moved} m");
    }
}

#[test]
fn replay_is_deterministic() {
    let rec = recording();
    let run = || {
        let mut twin = Twin::new(&TwinConfig::default()).unwrap();
        play(&mut twin, &rec, 10).trace
    };
    assert_eq!(run(), run());
}

#[test]
fn recordings_need_ordered_ticks() {
    let line = |tick: u64, seq: u64| {
        format!("{{\"v\":1,\"tick\":{tick},\"seq\":{seq},\"arm\":\"left\",\"kind\":\"key_down\",\"key\":\"W\"}}\n")
    };
    let ok = format!("{}\n{}", line(3, 1), line(3, 2));
    assert_eq!(parse_recording(ok.as_bytes()).unwrap().len(), 2);
    let bad = format!("{}{}", line(5, 1), line(4, 2));
    assert_eq!(parse_recording(bad.as_bytes()).unwrap_err().0, 2);
    let untimed = "{\"v\":1,\"seq\":1,\"arm\":\"left\",\"kind\":\"key_down\",\"key\":\"W\"}\n";
    assert_eq!(parse_recording(untimed.as_bytes()).unwrap_err().0, 1);
}
