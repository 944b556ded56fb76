//! Reference tip trajectories (truncated cone and truncated pyramid) and
//! tracking / RCM error reports over replayed traces.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rcm::{spherical_for_tip, unit_direction, FulcrumFrame, RcmLimits};
use crate::servo_sim::{replay, Trace, World};
use crate::Side;

/// Running max / RMS of a stream of non-negative errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorAccumulator {
    pub n: usize,
    pub max: f64,
    pub sum_sq: f64,
}

impl ErrorAccumulator {
    pub fn push(&mut self, e: f64) {
        self.n += 1;
        self.max = self.max.max(e);
        self.sum_sq += e * e;
    }

    pub fn rms(&self) -> f64 {
        if self.n == 0 { 0.0 } else { libm::sqrt(self.sum_sq / self.n as f64) }
    }
}

/// Max and RMSE of tracking and RCM errors, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub tracking_max: f64,
    pub tracking_rmse: f64,
    pub rcm_max: f64,
    pub rcm_rmse: f64,
    pub n_samples: usize,
}

/// Report over paired per-sample errors given in metres.
pub fn report_from_errors(tracking: &[f64], rcm: &[f64]) -> Result<ErrorReport> {
    if tracking.is_empty() || tracking.len() != rcm.len() {
        return Err(Error::InvalidArgument("error series must be non-empty and of equal length"));
    }
    let mut t = ErrorAccumulator::default();
    let mut r = ErrorAccumulator::default();
    tracking.iter().for_each(|e| t.push(e.abs()));
    rcm.iter().for_each(|e| r.push(e.abs()));
    Ok(ErrorReport {
        tracking_max: t.max * 1e3,
        tracking_rmse: t.rms() * 1e3,
        rcm_max: r.max * 1e3,
        rcm_rmse: r.rms() * 1e3,
        n_samples: tracking.len(),
    })
}

pub fn evaluate(trace: &Trace) -> Result<ErrorReport> {
    let tracking: Vec<f64> = trace.rows.iter().map(|r| r.tracking_error()).collect();
    let rcm: Vec<f64> = trace.rows.iter().map(|r| r.rcm_error).collect();
    report_from_errors(&tracking, &rcm)
}

/// Pass bounds for a benchmark run, mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceBounds {
    pub tracking_rmse: f64,
    pub tracking_max: f64,
    pub rcm_max: f64,
    pub rcm_rmse: f64,
}

impl Default for AcceptanceBounds {
    fn default() -> Self {
        Self { tracking_rmse: 0.1, tracking_max: 0.25, rcm_max: 0.005, rcm_rmse: 0.002 }
    }
}

impl AcceptanceBounds {
    pub fn passes(&self, r: &ErrorReport) -> bool {
        r.tracking_rmse <= self.tracking_rmse
            && r.tracking_max <= self.tracking_max
            && r.rcm_max <= self.rcm_max
            && r.rcm_rmse <= self.rcm_rmse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Cone,
    Pyramid,
}

/// Spiral between two circles about the initial tool axis. Depths are
/// measured from the hole along the axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeParams {
    pub top_radius: f64,
    pub bottom_radius: f64,
    pub depth_top: f64,
    pub depth_bottom: f64,
    pub turns: f64,
    pub samples_per_turn: usize,
    /// Largest allowed distance between consecutive samples, m.
    pub max_spacing: f64,
}

impl Default for ConeParams {
    fn default() -> Self {
        Self {
            top_radius: 0.015,
            bottom_radius: 0.025,
            depth_top: 0.060,
            depth_bottom: 0.100,
            turns: 3.0,
            samples_per_turn: 200,
            max_spacing: 0.001,
        }
    }
}

/// Square loops about the initial tool axis, side length interpolated
/// linearly between the top and bottom loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidParams {
    pub top_side: f64,
    pub bottom_side: f64,
    pub depth_top: f64,
    pub depth_bottom: f64,
    /// Number of square loops (at least 1).
    pub loops: usize,
    /// Samples per side; raised automatically to respect `max_spacing`.
    pub samples_per_side: usize,
    pub max_spacing: f64,
}

impl Default for PyramidParams {
    fn default() -> Self {
        Self {
            top_side: 0.030,
            bottom_side: 0.050,
            depth_top: 0.060,
            depth_bottom: 0.100,
            loops: 3,
            samples_per_side: 50,
            max_spacing: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryParams {
    Cone(ConeParams),
    Pyramid(PyramidParams),
}

/// Desired tip positions in the arm's base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub kind: TrajectoryKind,
    pub samples: Vec<Vector3<f64>>,
    pub params: TrajectoryParams,
}

/// Axis and lateral basis at the recorded fulcrum pose: `axis` points from
/// the hole towards the tip, `e1` lies in the plane `phi = phi0`.
pub fn trajectory_basis(frame: &FulcrumFrame) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let (st, ct) = (libm::sin(frame.theta0), libm::cos(frame.theta0));
    let (sp, cp) = (libm::sin(frame.phi0), libm::cos(frame.phi0));
    let axis = -unit_direction(frame.theta0, frame.phi0);
    let e1 = Vector3::new(-st * cp, -st * sp, ct);
    let e2 = Vector3::new(-sp, cp, 0.0);
    (axis, e1, e2)
}

fn check_depths(top: f64, bottom: f64) -> Result<()> {
    if !(top > 0.0 && bottom > 0.0 && top.is_finite() && bottom.is_finite()) {
        return Err(Error::InvalidTrajectory("depths must be positive".into()));
    }
    Ok(())
}

fn check_samples(samples: &[Vector3<f64>], frame: &FulcrumFrame, limits: &RcmLimits, max_spacing: f64) -> Result<()> {
    for (i, p) in samples.iter().enumerate() {
        let s = spherical_for_tip(frame, p)?;
        if !limits.contains(&s) {
            return Err(Error::InvalidTrajectory(format!(
                "sample {i} needs theta {:.4} rad, r {:.4} m outside the workspace",
                s.theta, s.r
            )));
        }
    }
    if let Some((i, gap)) = samples.windows(2).map(|w| (w[1] - w[0]).norm()).enumerate().find(|(_, g)| *g > max_spacing * (1.0 + 1e-9)) {
        return Err(Error::InvalidTrajectory(format!("spacing {gap:.3e} m after sample {i} exceeds {max_spacing:.3e} m")));
    }
    Ok(())
}

pub fn gen_truncated_cone(params: &ConeParams, frame: &FulcrumFrame, limits: &RcmLimits) -> Result<ReferenceTrajectory> {
    let p = params;
    check_depths(p.depth_top, p.depth_bottom)?;
    if !(p.top_radius >= 0.0 && p.bottom_radius >= 0.0 && p.turns > 0.0 && p.samples_per_turn >= 3 && p.max_spacing > 0.0) {
        return Err(Error::InvalidTrajectory("cone needs non-negative radii, positive turns and >= 3 samples per turn".into()));
    }
    let (axis, e1, e2) = trajectory_basis(frame);
    let n = libm::ceil(p.turns * p.samples_per_turn as f64) as usize;
    let samples: Vec<_> = (0..=n)
        .map(|k| {
            let s = k as f64 / n as f64;
            let angle = core::f64::consts::TAU * p.turns * s;
            let radius = p.top_radius + (p.bottom_radius - p.top_radius) * s;
            let depth = p.depth_top + (p.depth_bottom - p.depth_top) * s;
            frame.hole + axis * depth + (e1 * libm::cos(angle) + e2 * libm::sin(angle)) * radius
        })
        .collect();
    check_samples(&samples, frame, limits, p.max_spacing)?;
    Ok(ReferenceTrajectory { kind: TrajectoryKind::Cone, samples, params: TrajectoryParams::Cone(*p) })
}

/// Number of samples per side actually used for the pyramid.
pub fn pyramid_samples_per_side(p: &PyramidParams) -> usize {
    let widest = p.top_side.max(p.bottom_side);
    p.samples_per_side.max(libm::ceil(widest / p.max_spacing) as usize).max(1)
}

pub fn gen_truncated_pyramid(params: &PyramidParams, frame: &FulcrumFrame, limits: &RcmLimits) -> Result<ReferenceTrajectory> {
    let p = params;
    check_depths(p.depth_top, p.depth_bottom)?;
    if !(p.top_side >= 0.0 && p.bottom_side >= 0.0 && p.loops >= 1 && p.max_spacing > 0.0) {
        return Err(Error::InvalidTrajectory("pyramid needs non-negative sides and at least one loop".into()));
    }
    let (axis, e1, e2) = trajectory_basis(frame);
    let n = pyramid_samples_per_side(p);
    // Corners in (e1, e2) units of half a side, traversed counter-clockwise.
    let corners = [(1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let mut samples: Vec<Vector3<f64>> = Vec::new();
    for l in 0..p.loops {
        let s = if p.loops == 1 { 0.0 } else { l as f64 / (p.loops - 1) as f64 };
        let half = 0.5 * (p.top_side + (p.bottom_side - p.top_side) * s);
        let centre = frame.hole + axis * (p.depth_top + (p.depth_bottom - p.depth_top) * s);
        let at = |a: f64, b: f64| centre + e1 * (a * half) + e2 * (b * half);
        let first = at(corners[0].0, corners[0].1);
        if let Some(&prev) = samples.last() {
            // Straight transition to the next loop, split to respect the spacing.
            let steps = libm::ceil((first - prev).norm() / p.max_spacing) as usize;
            for k in 1..steps {
                samples.push(prev.lerp(&first, k as f64 / steps as f64));
            }
        }
        for side in 0..4 {
            let (a0, b0) = corners[side];
            let (a1, b1) = corners[side + 1];
            for k in 0..n {
                let t = k as f64 / n as f64;
                samples.push(at(a0 + (a1 - a0) * t, b0 + (b1 - b0) * t));
            }
        }
        samples.push(first);
    }
    check_samples(&samples, frame, limits, p.max_spacing)?;
    Ok(ReferenceTrajectory { kind: TrajectoryKind::Pyramid, samples, params: TrajectoryParams::Pyramid(*p) })
}

/// How a benchmark run is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    /// Waypoint rate of the reference trajectory, Hz.
    pub rate: f64,
    /// Tip speed for the approach to the first sample, m/s.
    pub lead_in_speed: f64,
    /// Time spent at the first sample before recording starts, s.
    pub settle_time: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { rate: 10.0, lead_in_speed: 0.005, settle_time: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub report: ErrorReport,
    /// Recorded part of the run (both arms).
    pub trace: Trace,
    /// `None` unless the approach or the main replay stopped early.
    pub failure: Option<&'static str>,
}

pub fn generate(params: &TrajectoryParams, frame: &FulcrumFrame, limits: &RcmLimits) -> Result<ReferenceTrajectory> {
    match params {
        TrajectoryParams::Cone(c) => gen_truncated_cone(c, frame, limits),
        TrajectoryParams::Pyramid(p) => gen_truncated_pyramid(p, frame, limits),
    }
}

/// Runs the trajectory on both arms at once, each about its own hole:
/// approach, settle, then the recorded replay.
pub fn run(world: &mut World, params: &TrajectoryParams, cfg: &BenchConfig) -> Result<BenchOutcome> {
    if !(cfg.rate > 0.0 && cfg.lead_in_speed > 0.0 && cfg.settle_time >= 0.0) {
        return Err(Error::InvalidArgument("bench rate and lead-in speed must be positive"));
    }
    let trajectories = [
        generate(params, &world.arm(Side::Left).frame, &world.config.rcm_limits)?,
        generate(params, &world.arm(Side::Right).frame, &world.config.rcm_limits)?,
    ];

    let approach: [Vec<Vector3<f64>>; 2] = Side::BOTH.map(|side| {
        let from = world.commanded_tip(side);
        let to = trajectories[side.index()].samples[0];
        let step = cfg.lead_in_speed / cfg.rate;
        let n = libm::ceil((to - from).norm() / step) as usize;
        let mut path: Vec<_> = (0..=n).map(|k| from.lerp(&to, if n == 0 { 1.0 } else { k as f64 / n as f64 })).collect();
        let hold = libm::ceil(cfg.settle_time * cfg.rate) as usize;
        path.extend(core::iter::repeat_n(to, hold + 1));
        path
    });
    let lead = replay(world, [Some(&approach[0]), Some(&approach[1])], cfg.rate)?;
    if !lead.is_complete() {
        let report = evaluate(&lead)?;
        return Ok(BenchOutcome { report, trace: lead, failure: Some("approach to the first sample stopped early") });
    }

    let trace = replay(world, [Some(&trajectories[0].samples), Some(&trajectories[1].samples)], cfg.rate)?;
    let report = evaluate(&trace)?;
    let failure = (!trace.is_complete()).then_some("replay stopped early");
    Ok(BenchOutcome { report, trace, failure })
}
