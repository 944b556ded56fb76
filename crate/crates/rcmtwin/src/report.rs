//! Benchmark output: per-tick trace CSV and the JSON error report.

use std::io::Write;
use std::path::Path;

use rcmtwin_core::bench::{AcceptanceBounds, ErrorReport};
use rcmtwin_core::servo_sim::Trace;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 12] = [
    "tick",
    "time_s",
    "arm",
    "tip_x",
    "tip_y",
    "tip_z",
    "des_x",
    "des_y",
    "des_z",
    "track_err_mm",
    "rcm_err_mm",
    "flags",
];

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    tick: u64,
    time_s: f64,
    arm: &'a str,
    tip_x: f64,
    tip_y: f64,
    tip_z: f64,
    des_x: f64,
    des_y: f64,
    des_z: f64,
    track_err_mm: f64,
    rcm_err_mm: f64,
    flags: u32,
}

/// Writes one row per arm per tick. Positions are world frame, m.
pub fn write_trace<W: Write>(out: W, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &trace.rows {
        w.serialize(CsvRow {
            tick: r.tick,
            time_s: r.time_s,
            arm: r.arm.as_str(),
            tip_x: r.tip_actual.x,
            tip_y: r.tip_actual.y,
            tip_z: r.tip_actual.z,
            des_x: r.tip_desired.x,
            des_y: r.tip_desired.y,
            des_z: r.tip_desired.z,
            track_err_mm: r.tracking_error() * 1e3,
            rcm_err_mm: r.rcm_error * 1e3,
            flags: r.flags,
        })?;
    }
    if trace.rows.is_empty() {
        w.write_record(TRACE_HEADER)?;
    }
    w.flush().map_err(Error::Net)?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &Trace) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.into(), source })?;
    write_trace(std::io::BufWriter::new(file), trace)
}

/// Error metrics in mm, as written to `report.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub tracking_max: f64,
    pub tracking_rmse: f64,
    pub rcm_max: f64,
    pub rcm_rmse: f64,
    pub n_samples: usize,
}

impl From<ErrorReport> for ReportMetrics {
    fn from(r: ErrorReport) -> Self {
        Self {
            tracking_max: r.tracking_max,
            tracking_rmse: r.tracking_rmse,
            rcm_max: r.rcm_max,
            rcm_rmse: r.rcm_rmse,
            n_samples: r.n_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub tracking_max: f64,
    pub tracking_rmse: f64,
    pub rcm_max: f64,
    pub rcm_rmse: f64,
}

impl From<AcceptanceBounds> for BoundsFile {
    fn from(b: AcceptanceBounds) -> Self {
        Self { tracking_max: b.tracking_max, tracking_rmse: b.tracking_rmse, rcm_max: b.rcm_max, rcm_rmse: b.rcm_rmse }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub shape: String,
    #[serde(flatten)]
    pub metrics: ReportMetrics,
    pub bounds: BoundsFile,
    /// Every bound met and the run completed.
    pub pass: bool,
    /// Why the run stopped early, if it did.
    pub failure: Option<String>,
    pub runtime_s: f64,
}

impl BenchReport {
    pub fn new(shape: &str, report: ErrorReport, bounds: AcceptanceBounds, failure: Option<&str>, runtime_s: f64) -> Self {
        Self {
            shape: shape.into(),
            metrics: report.into(),
            bounds: bounds.into(),
            pass: failure.is_none() && bounds.passes(&report),
            failure: failure.map(Into::into),
            runtime_s,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.into(), source })
    }
}
