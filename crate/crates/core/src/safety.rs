//! Per-tick guard run before a joint target is handed to the servo.
//!
//! [`check`] is a pure function returning every finding, in a fixed order
//! (RCM, joint limits, speed, singularity, configuration, reach, collision).

use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::kinematics::{branch_signature, jacobian, JointVector, Pose, RobotModel, JOINT_COUNT};
use crate::rcm::{rcm_error, FulcrumFrame};
use crate::Side;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyLimits {
    /// Largest accepted distance between hole and tool axis, m.
    pub rcm_error_max: f64,
    /// Smallest accepted Jacobian singular value.
    pub singularity_sigma_min: f64,
    /// Joint targets must stay this far inside the joint limits, rad.
    pub joint_margin: f64,
    /// Joint speeds must stay below `(1 - speed_margin)` of their limit.
    pub speed_margin: f64,
    /// Largest accepted flange distance from the base origin, m.
    pub reach_max: f64,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        Self { rcm_error_max: 0.5e-3, singularity_sigma_min: 1e-3, joint_margin: 0.01, speed_margin: 0.1, reach_max: 0.55 }
    }
}

impl SafetyLimits {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rcm_error_max, self.singularity_sigma_min, self.joint_margin, self.speed_margin, self.reach_max];
        if !all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig("safety limits must be positive and finite".into()));
        }
        if self.speed_margin >= 1.0 {
            return Err(Error::InvalidConfig("speed margin must be below 1".into()));
        }
        Ok(())
    }
}

/// What tripped. The discriminant order is the bit order of [`SafetyEventKind::bit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SafetyEventKind {
    RcmViolation,
    JointLimit,
    SpeedLimit,
    Singularity,
    ConfigurationChange,
    Unreachable,
    Collision,
    /// The spherical command hit the latitude or radius limit.
    WorkspaceLimit,
}

impl SafetyEventKind {
    pub const ALL: [SafetyEventKind; 8] = [
        SafetyEventKind::RcmViolation,
        SafetyEventKind::JointLimit,
        SafetyEventKind::SpeedLimit,
        SafetyEventKind::Singularity,
        SafetyEventKind::ConfigurationChange,
        SafetyEventKind::Unreachable,
        SafetyEventKind::Collision,
        SafetyEventKind::WorkspaceLimit,
    ];

    pub fn bit(self) -> u32 {
        1 << (self as u32)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SafetyEventKind::RcmViolation => "rcm_violation",
            SafetyEventKind::JointLimit => "joint_limit",
            SafetyEventKind::SpeedLimit => "speed_limit",
            SafetyEventKind::Singularity => "singularity",
            SafetyEventKind::ConfigurationChange => "configuration_change",
            SafetyEventKind::Unreachable => "unreachable",
            SafetyEventKind::Collision => "collision",
            SafetyEventKind::WorkspaceLimit => "workspace_limit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyEvent {
    pub kind: SafetyEventKind,
    pub arm: Side,
    pub tick: u64,
    /// The measured quantity that tripped the check (m, rad, rad/s or
    /// singular value, depending on `kind`).
    pub detail: f64,
}

/// Trainer box as an oriented box in the arm's base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionScene {
    /// Box centre and orientation; the box spans `+-half_extents` in this frame.
    pub box_pose: Pose,
    pub half_extents: Vector3<f64>,
    pub hole_radius: f64,
    pub tool_radius: f64,
}

impl CollisionScene {
    /// Distance from the tool-shaft segment `flange -> tip` to an illegal
    /// contact with the walls, or `None` if the shaft only passes through
    /// `hole`. The returned value is how far the wall crossing lies from
    /// the hole centre (or 0 for a flange inside the box).
    pub fn shaft_collision(&self, flange: &Vector3<f64>, tip: &Vector3<f64>, hole: &Vector3<f64>) -> Option<f64> {
        let inv = self.box_pose.inverse();
        let p = inv.transform_point(flange);
        let t = inv.transform_point(tip);
        let h_local = inv.transform_point(hole);
        let h = self.half_extents;
        let inside = |x: &Vector3<f64>, margin: f64| (0..3).all(|i| x[i].abs() < h[i] - margin);

        if inside(&p, 0.0) {
            return Some(0.0);
        }
        let clearance = self.hole_radius - self.tool_radius;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let plane = sign * h[axis];
                let (a, b) = (p[axis] - plane, t[axis] - plane);
                if a * b > 0.0 || a == b {
                    continue;
                }
                let c = p + (t - p) * (a / (a - b));
                let on_face = (0..3).filter(|&i| i != axis).all(|i| c[i].abs() <= h[i] + self.tool_radius);
                if !on_face {
                    continue;
                }
                let miss = (c - h_local).norm();
                if miss > clearance {
                    return Some(miss);
                }
            }
        }
        if inside(&t, -1e-12) && !inside(&t, self.tool_radius) {
            // Tip inside but touching a wall.
            return Some((t - h_local).norm());
        }
        None
    }
}

/// Everything [`check`] looks at for one arm on one tick.
#[derive(Debug, Clone, Copy)]
pub struct CheckInput<'a> {
    pub model: &'a RobotModel,
    pub prev_q: &'a JointVector,
    pub next_q: &'a JointVector,
    /// Flange pose at `next_q`.
    pub flange: &'a Pose,
    pub frame: &'a FulcrumFrame,
    /// Control period, s.
    pub dt: f64,
    pub arm: Side,
    pub tick: u64,
    pub scene: Option<&'a CollisionScene>,
}

pub fn check(input: &CheckInput<'_>, limits: &SafetyLimits) -> Result<Vec<SafetyEvent>> {
    if !(input.dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive"));
    }
    let mut events = Vec::new();
    let mut push = |kind, detail| events.push(SafetyEvent { kind, arm: input.arm, tick: input.tick, detail });

    let rcm = rcm_error(input.frame, input.flange);
    if !(rcm <= limits.rcm_error_max) {
        push(SafetyEventKind::RcmViolation, rcm);
    }

    if let Some((_, value)) = input.model.limit_violation(input.next_q, limits.joint_margin) {
        push(SafetyEventKind::JointLimit, value);
    }

    let mut worst: Option<(f64, f64)> = None;
    for i in 0..JOINT_COUNT {
        let speed = (input.next_q[i] - input.prev_q[i]).abs() / input.dt;
        let allowed = input.model.velocity_limits[i] * (1.0 - limits.speed_margin);
        let ratio = speed / allowed;
        if !(ratio <= 1.0) && worst.is_none_or(|(r, _)| ratio > r) {
            worst = Some((ratio, speed));
        }
    }
    if let Some((_, speed)) = worst {
        push(SafetyEventKind::SpeedLimit, speed);
    }

    let sigma = jacobian(input.model, input.next_q).sigma_min();
    if !(sigma >= limits.singularity_sigma_min) {
        push(SafetyEventKind::Singularity, sigma);
    }

    let before = branch_signature(input.model, input.prev_q);
    let after = branch_signature(input.model, input.next_q);
    if before != after {
        let flipped = [before.shoulder != after.shoulder, before.elbow != after.elbow, before.wrist != after.wrist];
        let which = flipped.iter().position(|f| *f).unwrap_or(0);
        push(SafetyEventKind::ConfigurationChange, which as f64);
    }

    let reach = input.flange.position.norm();
    if !(reach <= limits.reach_max) {
        push(SafetyEventKind::Unreachable, reach);
    }

    if let Some(scene) = input.scene {
        let tip = input.flange.transform_point(&Vector3::new(0.0, 0.0, input.frame.tool_length));
        if let Some(miss) = scene.shaft_collision(&input.flange.position, &tip, &input.frame.hole) {
            push(SafetyEventKind::Collision, miss);
        }
    }
    Ok(events)
}

/// Bitmask of event kinds.
pub fn event_bits(events: &[SafetyEvent]) -> u32 {
    events.iter().fold(0, |acc, e| acc | e.kind.bit())
}
