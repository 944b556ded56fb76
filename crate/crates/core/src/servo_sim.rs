//! The simulated arms: a lookahead servo model, the two-arm world stepped at
//! a fixed control rate, and trajectory replay for benchmarking.
//!
//! The clock is logical. Nothing here reads wall time, so identical command
//! streams give bit-identical traces.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Rotation3, Vector3};

use crate::bench::ErrorAccumulator;
use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, inverse_kinematics_continuation, rot_z, tool_tip, JointVector, Pose, RobotModel,
};
use crate::rcm::{
    aligned_flange_rotation, flange_pose, flange_position, rcm_error, record_fulcrum, step_spherical, tip_delta_to_command,
    tip_position, FulcrumFrame, LimitHits, RcmCommand, RcmLimits, SphericalState,
};
use crate::safety::{check, event_bits, CheckInput, CollisionScene, SafetyEvent, SafetyEventKind, SafetyLimits};
use crate::Side;

/// Trace flag set while an arm is holding after a safety event.
pub const FLAG_HOLD: u32 = 1 << 8;

/// Simulated joint state of one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub q: JointVector,
    pub qd: JointVector,
    pub grasp: f64,
    pub spin_offset: f64,
    pub tick: u64,
    pub time: f64,
    /// Target given on the previous step; `None` disables extrapolation.
    pub last_target: Option<JointVector>,
}

impl RobotState {
    pub fn at_rest(q: JointVector) -> Self {
        Self { q, qd: JointVector::zeros(), grasp: 0.0, spin_offset: 0.0, tick: 0, time: 0.0, last_target: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoConfig {
    /// Hz.
    pub control_rate: f64,
    /// s, within the servo's documented 0.03..0.2 range.
    pub lookahead_time: f64,
    /// Tracking gain, 1/s.
    pub gain: f64,
    /// Joint speed clamp, rad/s.
    pub max_joint_vel: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self::new(125.0, 0.1)
    }
}

impl ServoConfig {
    pub const LOOKAHEAD_MIN: f64 = 0.03;
    pub const LOOKAHEAD_MAX: f64 = 0.2;

    /// Config with `gain = 1 / lookahead_time` and a pi rad/s clamp.
    pub fn new(control_rate: f64, lookahead_time: f64) -> Self {
        Self { control_rate, lookahead_time, gain: 1.0 / lookahead_time, max_joint_vel: core::f64::consts::PI }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.control_rate > 0.0 && self.control_rate.is_finite()) {
            return Err(Error::InvalidConfig("control rate must be positive".into()));
        }
        if !(Self::LOOKAHEAD_MIN..=Self::LOOKAHEAD_MAX).contains(&self.lookahead_time) {
            return Err(Error::InvalidConfig(format!(
                "lookahead time {} s outside [{}, {}]",
                self.lookahead_time,
                Self::LOOKAHEAD_MIN,
                Self::LOOKAHEAD_MAX
            )));
        }
        if !(self.gain > 0.0 && self.gain * self.dt() <= 1.0) {
            return Err(Error::InvalidConfig("gain must be positive and at most the control rate".into()));
        }
        if !(self.max_joint_vel > 0.0) {
            return Err(Error::InvalidConfig("max joint velocity must be positive".into()));
        }
        Ok(())
    }
}

/// One servo period.
///
/// The target is extrapolated along its own rate of change by
/// `1/gain - dt` (the lookahead minus the period the command needs to take
/// effect), then tracked first-order: `qd = clamp(gain * (ahead - q))`.
/// A ramp target is therefore tracked without lag, and a constant one is
/// approached monotonically without overshoot. A non-finite target holds.
pub fn servo_step(state: &RobotState, q_target: &JointVector, cfg: &ServoConfig) -> RobotState {
    let dt = cfg.dt();
    let target = if q_target.iter().all(|v| v.is_finite()) { *q_target } else { state.q };
    let horizon = (1.0 / cfg.gain - dt).max(0.0);
    let ahead = match state.last_target {
        Some(prev) => target + (target - prev) * (horizon / dt),
        None => target,
    };
    let qd = ((ahead - state.q) * cfg.gain).map(|v| v.clamp(-cfg.max_joint_vel, cfg.max_joint_vel));
    let tick = state.tick + 1;
    RobotState {
        q: state.q + qd * dt,
        qd,
        tick,
        time: tick as f64 / cfg.control_rate,
        last_target: Some(target),
        ..*state
    }
}

/// Why an arm is holding still.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hold {
    Operator,
    Safety(SafetyEvent),
}

/// Placement of one arm and its hole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmSetup {
    pub side: Side,
    /// Arm base in the world frame.
    pub base: Pose,
    /// Hole centre in the world frame.
    pub hole: Vector3<f64>,
    pub theta0: f64,
    pub phi0: f64,
    pub r0: f64,
    /// Joint guess for the starting pose; defines the IK branch.
    pub seed_q: JointVector,
}

/// Trainer box in the world frame, centred on `pose`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerBox {
    pub pose: Pose,
    pub half_extents: Vector3<f64>,
    pub hole_radius: f64,
    pub tool_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub model: RobotModel,
    pub servo: ServoConfig,
    pub safety: SafetyLimits,
    pub rcm_limits: RcmLimits,
    pub tool_length: f64,
    pub trainer_box: Option<TrainerBox>,
    pub arms: [ArmSetup; 2],
}

impl WorldConfig {
    /// Two UR3 arms facing each other across a 30 x 20 x 15 cm box, 30 cm
    /// instruments through 8 mm holes 14 cm apart in the box top.
    pub fn trainer_default() -> Self {
        use core::f64::consts::PI;
        let tool_length = 0.30;
        let seed_q = JointVector::new(2.72, -1.75, 1.76, -1.98, -1.40, 2.75);
        let arm = |side, x: f64, yaw: f64, hole_x: f64| ArmSetup {
            side,
            base: Pose::new(Vector3::new(x, 0.0, 0.0), rot_z(yaw)),
            hole: Vector3::new(hole_x, 0.0, 0.15),
            theta0: 65f64.to_radians(),
            phi0: PI,
            r0: 0.22,
            seed_q,
        };
        Self {
            model: RobotModel::ur3(tool_length),
            servo: ServoConfig::default(),
            safety: SafetyLimits::default(),
            rcm_limits: RcmLimits::for_tool(tool_length),
            tool_length,
            trainer_box: Some(TrainerBox {
                pose: Pose::new(Vector3::new(0.0, 0.0, 0.075), Rotation3::identity()),
                half_extents: Vector3::new(0.15, 0.10, 0.075),
                hole_radius: 0.004,
                tool_radius: 0.0025,
            }),
            arms: [arm(Side::Left, -0.47, 0.0, -0.07), arm(Side::Right, 0.47, PI, 0.07)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.servo.validate()?;
        self.safety.validate()?;
        self.rcm_limits.validate()?;
        if !(self.tool_length > self.rcm_limits.r_max) {
            return Err(Error::InvalidConfig("tool length must exceed r_max".into()));
        }
        if let Some(b) = &self.trainer_box {
            if !(b.half_extents.iter().all(|v| *v > 0.0) && b.tool_radius > 0.0 && b.hole_radius > b.tool_radius) {
                return Err(Error::InvalidConfig("box extents must be positive and holes wider than the tool".into()));
            }
        }
        if self.arms[0].side != Side::Left || self.arms[1].side != Side::Right {
            return Err(Error::InvalidConfig("arms must be listed left then right".into()));
        }
        Ok(())
    }
}

/// Everything the world tracks for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub side: Side,
    /// Arm base in the world frame.
    pub base: Pose,
    /// Fulcrum recorded at start-up, base frame.
    pub frame: FulcrumFrame,
    /// Last accepted spherical state.
    pub spherical: SphericalState,
    pub robot: RobotState,
    pub hold: Option<Hold>,
    pub limit_hits: LimitHits,
    /// Events raised on the most recent tick.
    pub events: Vec<SafetyEvent>,
    /// RCM error of the actual flange pose after the most recent tick, m.
    pub rcm_error: f64,
    /// Running RCM error statistics since start (or the last reset).
    pub rcm_stats: ErrorAccumulator,
    pub scene: Option<CollisionScene>,
    home_q: JointVector,
}

impl ArmState {
    pub fn is_holding(&self) -> bool {
        self.hold.is_some()
    }

    /// Trace flags: event bits of the last tick plus [`FLAG_HOLD`].
    pub fn flags(&self) -> u32 {
        event_bits(&self.events) | if self.is_holding() { FLAG_HOLD } else { 0 }
    }

    pub fn home_q(&self) -> &JointVector {
        &self.home_q
    }
}

/// The two-arm twin.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub arms: [ArmState; 2],
    pub tick: u64,
}

impl World {
    /// Brings each arm to its starting pose about its hole, records the
    /// fulcrum, and checks the start is safe.
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let arms = [Self::init_arm(&config, &config.arms[0])?, Self::init_arm(&config, &config.arms[1])?];
        Ok(Self { config, arms, tick: 0 })
    }

    fn init_arm(config: &WorldConfig, setup: &ArmSetup) -> Result<ArmState> {
        let model = &config.model;
        let hole = setup.base.inverse().transform_point(&setup.hole);
        let ideal = FulcrumFrame::aligned(hole, setup.theta0, setup.phi0, setup.r0, config.tool_length);
        let start = ideal.initial_state();
        if !config.rcm_limits.contains(&start) {
            return Err(Error::InvalidConfig(format!("{} arm: starting state outside the RCM limits", setup.side)));
        }
        let target = Pose::new(flange_position(&ideal, &start), aligned_flange_rotation(setup.theta0, setup.phi0));
        let mut q = inverse_kinematics_continuation(model, &setup.seed_q, &target, 50)
            .map_err(|e| Error::InvalidConfig(format!("{} arm: starting pose not reachable ({e})", setup.side)))?
            .q;
        let record = record_fulcrum(&forward_kinematics(model, &q), config.tool_length, hole)?;
        q[5] += record.joint6_prerotation;
        let frame = record.frame;

        let scene = config.trainer_box.map(|b| CollisionScene {
            box_pose: setup.base.inverse() * b.pose,
            half_extents: b.half_extents,
            hole_radius: b.hole_radius,
            tool_radius: b.tool_radius,
        });
        let flange = forward_kinematics(model, &q);
        let input = CheckInput {
            model,
            prev_q: &q,
            next_q: &q,
            flange: &flange,
            frame: &frame,
            dt: config.servo.dt(),
            arm: setup.side,
            tick: 0,
            scene: scene.as_ref(),
        };
        if let Some(e) = check(&input, &config.safety)?.first() {
            return Err(Error::InvalidConfig(format!(
                "{} arm: starting configuration trips {} ({:.3e})",
                setup.side,
                e.kind.as_str(),
                e.detail
            )));
        }
        let rcm = rcm_error(&frame, &flange);
        Ok(ArmState {
            side: setup.side,
            base: setup.base,
            frame,
            spherical: frame.initial_state(),
            robot: RobotState::at_rest(q),
            hold: None,
            limit_hits: LimitHits::default(),
            events: Vec::new(),
            rcm_error: rcm,
            rcm_stats: ErrorAccumulator::default(),
            scene,
            home_q: q,
        })
    }

    pub fn dt(&self) -> f64 {
        self.config.servo.dt()
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.config.servo.control_rate
    }

    pub fn arm(&self, side: Side) -> &ArmState {
        &self.arms[side.index()]
    }

    /// Actual flange pose of an arm, base frame.
    pub fn flange(&self, side: Side) -> Pose {
        forward_kinematics(&self.config.model, &self.arm(side).robot.q)
    }

    /// Actual tool tip of an arm in the world frame.
    pub fn tip_world(&self, side: Side) -> Vector3<f64> {
        let arm = self.arm(side);
        arm.base.transform_point(&tool_tip(&self.config.model, &arm.robot.q))
    }

    /// Tip of the commanded spherical state, base frame.
    pub fn commanded_tip(&self, side: Side) -> Vector3<f64> {
        let arm = self.arm(side);
        tip_position(&arm.frame, &arm.spherical).unwrap_or(arm.frame.hole)
    }

    /// Puts an arm into HOLD on operator request.
    pub fn hold(&mut self, side: Side) {
        let arm = &mut self.arms[side.index()];
        if arm.hold.is_none() {
            arm.hold = Some(Hold::Operator);
            arm.robot.last_target = None;
        }
    }

    /// Clears HOLD. Motion resumes from the last accepted spherical state.
    pub fn resume(&mut self, side: Side) {
        let arm = &mut self.arms[side.index()];
        arm.hold = None;
        arm.robot.last_target = None;
    }

    /// Returns an arm to its starting pose and clears its statistics.
    pub fn reset(&mut self, side: Side) {
        let arm = &mut self.arms[side.index()];
        arm.robot = RobotState { tick: arm.robot.tick, time: arm.robot.time, ..RobotState::at_rest(arm.home_q) };
        arm.spherical = arm.frame.initial_state();
        arm.hold = None;
        arm.events.clear();
        arm.limit_hits = LimitHits::default();
        arm.rcm_stats = ErrorAccumulator::default();
    }

    /// One control period for both arms (left first). Returns the events
    /// raised on this tick.
    pub fn tick(&mut self, commands: &[RcmCommand; 2]) -> Vec<SafetyEvent> {
        let tick = self.tick + 1;
        let mut raised = Vec::new();
        for side in Side::BOTH {
            let events = self.step_arm(side, &commands[side.index()], tick);
            raised.extend_from_slice(&events);
            let arm = &mut self.arms[side.index()];
            arm.events = events;
        }
        self.tick = tick;
        raised
    }

    fn step_arm(&mut self, side: Side, command: &RcmCommand, tick: u64) -> Vec<SafetyEvent> {
        let cfg = &self.config;
        let arm = &mut self.arms[side.index()];
        let mut events = Vec::new();
        let event = |kind, detail| SafetyEvent { kind, arm: side, tick, detail };
        arm.limit_hits = LimitHits::default();

        let mut target = None;
        if arm.hold.is_none() {
            let command = if command.is_finite() { *command } else { RcmCommand::zero() };
            let (next, hits) = step_spherical(&arm.spherical, &command, &cfg.rcm_limits);
            arm.limit_hits = hits;
            if hits.workspace() {
                events.push(event(SafetyEventKind::WorkspaceLimit, if hits.theta { next.theta } else { next.r }));
            } else {
                let pose = flange_pose(&arm.frame, &next);
                let pose = Pose::new(pose.position, pose.rotation * rot_z(next.spin));
                match inverse_kinematics(&cfg.model, &arm.robot.q, &pose) {
                    Err(Error::JointLimit { value, .. }) => events.push(event(SafetyEventKind::JointLimit, value)),
                    Err(Error::Unreachable { residual, .. }) => events.push(event(SafetyEventKind::Unreachable, residual)),
                    Err(_) => events.push(event(SafetyEventKind::Unreachable, 0.0)),
                    Ok(sol) => {
                        let flange = forward_kinematics(&cfg.model, &sol.q);
                        let input = CheckInput {
                            model: &cfg.model,
                            prev_q: &arm.robot.q,
                            next_q: &sol.q,
                            flange: &flange,
                            frame: &arm.frame,
                            dt: cfg.servo.dt(),
                            arm: side,
                            tick,
                            scene: arm.scene.as_ref(),
                        };
                        match check(&input, &cfg.safety) {
                            Ok(found) if found.is_empty() => {
                                arm.spherical = next;
                                target = Some(sol.q);
                            }
                            Ok(found) => events.extend(found),
                            Err(_) => events.push(event(SafetyEventKind::Unreachable, 0.0)),
                        }
                    }
                }
            }
        }

        if !events.is_empty() && arm.hold.is_none() {
            arm.hold = Some(Hold::Safety(events[0]));
        }
        let q_target = target.unwrap_or(arm.robot.q);
        if target.is_none() {
            arm.robot.last_target = None;
        }
        arm.robot = servo_step(&arm.robot, &q_target, &cfg.servo);
        arm.robot.grasp = arm.spherical.grasp;
        arm.robot.spin_offset = arm.spherical.spin;

        let rcm = rcm_error(&arm.frame, &forward_kinematics(&cfg.model, &arm.robot.q));
        arm.rcm_error = rcm;
        arm.rcm_stats.push(rcm);
        if !(rcm <= cfg.safety.rcm_error_max) {
            let e = event(SafetyEventKind::RcmViolation, rcm);
            events.push(e);
            if arm.hold.is_none() {
                arm.hold = Some(Hold::Safety(e));
            }
        }
        events
    }
}

/// One traced sample of one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub time_s: f64,
    pub arm: Side,
    /// World frame, m.
    pub tip_actual: Vector3<f64>,
    /// World frame, m.
    pub tip_desired: Vector3<f64>,
    /// m.
    pub rcm_error: f64,
    pub flags: u32,
}

impl TraceRow {
    /// m.
    pub fn tracking_error(&self) -> f64 {
        (self.tip_actual - self.tip_desired).norm()
    }
}

/// Why a replay stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub tick: u64,
    pub arm: Side,
    /// Waypoint index being tracked when the replay stopped.
    pub waypoint: usize,
    pub events: Vec<SafetyEvent>,
    /// Set when the waypoint could not be converted to a command.
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub truncated: Option<Truncation>,
}

impl Trace {
    pub fn is_complete(&self) -> bool {
        self.truncated.is_none()
    }

    pub fn append(&mut self, other: Trace) {
        self.rows.extend(other.rows);
        if self.truncated.is_none() {
            self.truncated = other.truncated;
        }
    }
}

fn waypoint_at(path: &[Vector3<f64>], u: f64) -> (Vector3<f64>, usize) {
    let last = path.len() - 1;
    let u = u.clamp(0.0, last as f64);
    let i = (libm::floor(u) as usize).min(last);
    if i == last {
        return (path[last], last);
    }
    (path[i].lerp(&path[i + 1], u - i as f64), i)
}

/// Drives the arms along tip paths (base frame of each arm, sampled at
/// `rate` Hz and linearly interpolated per tick). Arms without a path get
/// zero commands. Each tick's command closes the loop on the commanded
/// spherical state; recorded actual tips come from forward kinematics.
/// The replay stops at the first safety event or unconvertible waypoint.
pub fn replay(world: &mut World, paths: [Option<&[Vector3<f64>]>; 2], rate: f64) -> Result<Trace> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument("replay rate must be positive"));
    }
    let longest = paths.iter().flatten().map(|p| p.len()).max().ok_or(Error::InvalidArgument("no path to replay"))?;
    if paths.iter().flatten().any(|p| p.is_empty()) {
        return Err(Error::InvalidTrajectory("empty path".into()));
    }
    let dt = world.dt();
    let ticks = libm::ceil((longest - 1) as f64 / rate / dt - 1e-9) as u64 + 1;
    let mut trace = Trace::default();

    for k in 0..ticks {
        let u = k as f64 * dt * rate;
        let mut commands = [RcmCommand::zero(); 2];
        let mut desired = [None; 2];
        for side in Side::BOTH {
            let Some(path) = paths[side.index()] else { continue };
            let (goal, index) = waypoint_at(path, u);
            let arm = world.arm(side);
            let cmd = tip_position(&arm.frame, &arm.spherical)
                .and_then(|tip| tip_delta_to_command(&arm.frame, &arm.spherical, &(goal - tip)));
            match cmd {
                Ok(c) => commands[side.index()] = c,
                Err(e) => {
                    trace.truncated = Some(Truncation { tick: world.tick, arm: side, waypoint: index, events: Vec::new(), error: Some(e) });
                    return Ok(trace);
                }
            }
            desired[side.index()] = Some((goal, index));
        }
        world.tick(&commands);
        for side in Side::BOTH {
            let Some((goal, index)) = desired[side.index()] else { continue };
            let arm = world.arm(side);
            trace.rows.push(TraceRow {
                tick: world.tick,
                time_s: world.time(),
                arm: side,
                tip_actual: world.tip_world(side),
                tip_desired: arm.base.transform_point(&goal),
                rcm_error: arm.rcm_error,
                flags: arm.flags(),
            });
            if !arm.events.is_empty() && trace.truncated.is_none() {
                trace.truncated = Some(Truncation { tick: world.tick, arm: side, waypoint: index, events: arm.events.clone(), error: None });
            }
        }
        if trace.truncated.is_some() {
            break;
        }
    }
    Ok(trace)
}
