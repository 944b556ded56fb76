//! Scripted safety drills: each drives one arm into a hazard with a
//! constant command and records what the monitors did.

use rcmtwin_core::kinematics::{forward_kinematics, JointVector};
use rcmtwin_core::rcm::RcmCommand;
use rcmtwin_core::safety::{SafetyEvent, SafetyEventKind};
use rcmtwin_core::servo_sim::{World, WorldConfig};
use rcmtwin_core::Side;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drill {
    /// Tilt the tool until latitude passes its limit.
    ThetaLimit,
    /// Swing the tool about the hole until the flange would have to leave
    /// the arm's reach.
    Unreachable,
    /// Pivot a wrist that starts next to its `q5 = 0` singularity through it.
    SingularWrist,
}

impl Drill {
    pub const ALL: [Drill; 3] = [Drill::ThetaLimit, Drill::Unreachable, Drill::SingularWrist];

    pub fn expected(self) -> SafetyEventKind {
        match self {
            Drill::ThetaLimit => SafetyEventKind::WorkspaceLimit,
            Drill::Unreachable => SafetyEventKind::Unreachable,
            Drill::SingularWrist => SafetyEventKind::Singularity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Drill::ThetaLimit => "theta limit",
            Drill::Unreachable => "unreachable target",
            Drill::SingularWrist => "near-singular wrist",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrillOutcome {
    pub drill: Drill,
    /// First tick with events, and those events.
    pub first: Option<(u64, Vec<SafetyEvent>)>,
    /// Arm still holding at the end of the run.
    pub held: bool,
    /// Joints unchanged over the ticks after the HOLD.
    pub frozen: bool,
    /// Largest RCM error over the run, m.
    pub rcm_max: f64,
    pub ticks: u64,
}

impl DrillOutcome {
    pub fn first_kind(&self) -> Option<SafetyEventKind> {
        self.first.as_ref().and_then(|(_, e)| e.first()).map(|e| e.kind)
    }

    pub fn passed(&self, rcm_bound: f64) -> bool {
        self.first_kind() == Some(self.drill.expected()) && self.held && self.frozen && self.rcm_max <= rcm_bound
    }
}

/// Keeps ticking after the first event to show the HOLD sticks.
const HOLD_TICKS: u64 = 250;
const MAX_TICKS: u64 = 20_000;

pub fn run(drill: Drill) -> Result<DrillOutcome> {
    let (mut world, command) = setup(drill)?;
    let mut out = DrillOutcome { drill, first: None, held: false, frozen: true, rcm_max: 0.0, ticks: 0 };
    let mut frozen_q: Option<JointVector> = None;
    let mut after = 0;
    while out.ticks < MAX_TICKS && after < HOLD_TICKS {
        let events = world.tick(&[command, RcmCommand::zero()]);
        out.ticks += 1;
        let arm = world.arm(Side::Left);
        out.rcm_max = out.rcm_max.max(arm.rcm_error);
        if out.first.is_none() && !events.is_empty() {
            out.first = Some((world.tick, events));
            frozen_q = Some(arm.robot.q);
        } else if let Some(q) = frozen_q {
            out.frozen &= arm.robot.q == q;
            after += 1;
        }
    }
    out.held = world.arm(Side::Left).is_holding();
    Ok(out)
}

fn setup(drill: Drill) -> Result<(World, RcmCommand)> {
    let mut cfg = WorldConfig::trainer_default();
    let dt = cfg.servo.dt();
    let command = match drill {
        Drill::ThetaLimit => RcmCommand { d_theta: 0.2 * dt, ..RcmCommand::zero() },
        Drill::Unreachable => RcmCommand { d_phi: 0.2 * dt, ..RcmCommand::zero() },
        Drill::SingularWrist => {
            // Hole placed on the axis of a wrist at q5 = 0, then the start
            // pose backed off 10 deg in latitude so the drive crosses it.
            cfg.trainer_box = None;
            let q_sing = JointVector::new(2.72, -1.75, 1.76, -1.98, 0.0, 2.75);
            let flange = forward_kinematics(&cfg.model, &q_sing);
            let r0 = 0.22;
            let hole = flange.position + flange.z_axis() * r0;
            let d = flange.position - hole;
            let arm = &mut cfg.arms[0];
            arm.hole = arm.base.transform_point(&hole);
            arm.theta0 = (-10f64).to_radians();
            arm.phi0 = d.y.atan2(d.x);
            arm.r0 = r0;
            arm.seed_q = JointVector::new(2.72, -1.75, 1.76, -1.98, -0.3, 2.75);
            RcmCommand { d_theta: 0.02 * dt, ..RcmCommand::zero() }
        }
    };
    Ok((World::new(cfg)?, command))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_drill_trips_its_monitor() {
        for d in Drill::ALL {
            let out = run(d).unwrap();
            assert!(out.passed(0.5e-3), "{:?}: {out:?}", d);
        }
    }
}
