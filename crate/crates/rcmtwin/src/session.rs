//! The authoritative twin: a [`World`] plus the operator input state of
//! each arm. Commands are applied between ticks; [`Twin::step`] advances
//! one control period.

use std::path::Path;

use rcmtwin_core::bench::ErrorAccumulator;
use rcmtwin_core::rcm::RcmCommand;
use rcmtwin_core::safety::SafetyEvent;
use rcmtwin_core::servo_sim::{Hold, Trace, TraceRow, World};
use rcmtwin_core::teleop::{map_key, ArmInput, SpeedScale, TeleopConfig};
use rcmtwin_core::Side;
use serde_json::Value;

use crate::config::TwinConfig;
use crate::error::{Error, Result};
use crate::protocol::{
    ArmSnapshot, CommandMessage, CommandPayload, DecodeError, EventRecord, HoldReason, LineReader, NackReason,
    SceneConfig, SessionVerb, StateMessage,
};

/// Why a command was refused. Sent back as a NACK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub reason: NackReason,
    pub detail: String,
}

impl Rejection {
    fn new(reason: NackReason, detail: impl Into<String>) -> Self {
        Self { reason, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct Twin {
    world: World,
    inputs: [ArmInput; 2],
    teleop: TeleopConfig,
}

impl Twin {
    pub fn new(cfg: &TwinConfig) -> Result<Self> {
        let world = World::new(cfg.world.clone())?;
        Ok(Self::from_world(world, cfg.teleop))
    }

    pub fn from_world(world: World, teleop: TeleopConfig) -> Self {
        Self { world, inputs: [ArmInput::new(Side::Left), ArmInput::new(Side::Right)], teleop }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn input(&self, side: Side) -> &ArmInput {
        &self.inputs[side.index()]
    }

    /// Applies one command to the input state. Takes effect on the next
    /// [`step`](Self::step).
    pub fn apply(&mut self, cmd: &CommandMessage) -> std::result::Result<(), Rejection> {
        let side = cmd.arm;
        let input = &mut self.inputs[side.index()];
        match cmd.payload {
            CommandPayload::KeyDown(key) | CommandPayload::KeyUp(key) => {
                let intent =
                    map_key(key).ok_or_else(|| Rejection::new(NackReason::UnmappedKey, format!("`{key}` is not mapped")))?;
                if intent.side != side {
                    return Err(Rejection::new(
                        NackReason::ArmMismatch,
                        format!("`{key}` belongs to the {} arm", intent.side),
                    ));
                }
                input.action(intent.action, matches!(cmd.payload, CommandPayload::KeyDown(_)));
            }
            CommandPayload::Stylus(s) => {
                let finite = s.position.iter().chain(&s.orientation).all(|v| v.is_finite()) && s.timestamp.is_finite();
                if !finite {
                    return Err(Rejection::new(NackReason::InvalidValue, "stylus sample must be finite"));
                }
                input.stylus(s);
            }
            CommandPayload::Session(verb) => match verb {
                SessionVerb::Start => {
                    self.world.reset(side);
                    *input = ArmInput::new(side);
                }
                SessionVerb::Hold => self.world.hold(side),
                SessionVerb::Resume => self.world.resume(side),
                SessionVerb::SetSpeed(level) => {
                    if level >= SpeedScale::LEVELS {
                        return Err(Rejection::new(
                            NackReason::InvalidValue,
                            format!("speed level must be below {}", SpeedScale::LEVELS),
                        ));
                    }
                    input.speed = SpeedScale::new(level);
                }
            },
        }
        Ok(())
    }

    /// Lets go of every held key and stylus on both arms.
    pub fn release_inputs(&mut self) {
        for input in &mut self.inputs {
            input.release_all();
            input.reset_stylus();
        }
    }

    /// One control period. Returns the safety events raised.
    pub fn step(&mut self) -> Vec<SafetyEvent> {
        let dt = self.world.dt();
        let mut commands = [RcmCommand::zero(); 2];
        for side in Side::BOTH {
            let arm = self.world.arm(side);
            commands[side.index()] =
                self.inputs[side.index()].command(dt, &self.teleop, &arm.frame, &arm.spherical).unwrap_or(RcmCommand::zero());
        }
        self.world.tick(&commands)
    }

    pub fn snapshot(&self, last_seq: Option<u64>, latency_ms: Option<f64>) -> StateMessage {
        let w = &self.world;
        let arm = |side: Side| {
            let a = w.arm(side);
            let flange = w.flange(side);
            ArmSnapshot {
                arm: side,
                q: a.robot.q.into(),
                tip: w.tip_world(side).into(),
                flange: a.base.transform_point(&flange.position).into(),
                axis: (a.base.rotation * flange.z_axis()).into(),
                fulcrum: a.base.transform_point(&a.frame.hole).into(),
                grasp: a.robot.grasp,
                spin: a.robot.spin_offset,
                rcm_error_mm: a.rcm_error * 1e3,
                speed_level: self.inputs[side.index()].speed.level(),
                flags: a.flags(),
                hold: a.hold.map(|h| match h {
                    Hold::Operator => HoldReason::Operator,
                    Hold::Safety(e) => HoldReason::Safety(e.kind),
                }),
                events: a.events.iter().map(|e| EventRecord { kind: e.kind, tick: e.tick, detail: e.detail }).collect(),
            }
        };
        StateMessage {
            tick: w.tick,
            time_s: w.time(),
            arms: [arm(Side::Left), arm(Side::Right)],
            last_seq,
            latency_ms,
        }
    }

    pub fn scene(&self) -> SceneConfig {
        let c = &self.world.config;
        let hole = |side: Side| {
            let a = self.world.arm(side);
            a.base.transform_point(&a.frame.hole).into()
        };
        SceneConfig {
            box_dims: c.trainer_box.map(|b| (b.half_extents * 2.0).into()),
            box_center: c.trainer_box.map(|b| b.pose.position.into()),
            holes: [hole(Side::Left), hole(Side::Right)],
            hole_diameter: c.trainer_box.map_or(0.0, |b| 2.0 * b.hole_radius),
            tool_diameter: c.trainer_box.map_or(0.0, |b| 2.0 * b.tool_radius),
            tool_length: c.tool_length,
            control_rate: c.servo.control_rate,
            speed_levels: SpeedScale::LEVELS,
        }
    }

    /// Trace row of one arm at the current tick; the desired tip is the
    /// commanded one.
    pub fn trace_row(&self, side: Side) -> TraceRow {
        let a = self.world.arm(side);
        TraceRow {
            tick: self.world.tick,
            time_s: self.world.time(),
            arm: side,
            tip_actual: self.world.tip_world(side),
            tip_desired: a.base.transform_point(&self.world.commanded_tip(side)),
            rcm_error: a.rcm_error,
            flags: a.flags(),
        }
    }
}

/// A command tagged with the tick before which it is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordedCommand {
    pub tick: u64,
    pub command: CommandMessage,
}

/// Reads a recorded session: command lines carrying an extra `tick` field,
/// in non-decreasing tick order.
pub fn load_recording(path: &Path) -> Result<Vec<RecordedCommand>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
    parse_recording(std::io::BufReader::new(file)).map_err(|(line, e)| Error::Config(format!("{}:{line}: {e}", path.display())))
}

pub fn parse_recording<R: std::io::BufRead>(reader: R) -> std::result::Result<Vec<RecordedCommand>, (usize, DecodeError)> {
    let mut out: Vec<RecordedCommand> = Vec::new();
    for (i, line) in LineReader::new(reader).enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| (n, e))?;
        let v: Value = serde_json::from_str(&line).map_err(|e| (n, DecodeError::Json(e.to_string())))?;
        let tick = v
            .get("tick")
            .ok_or((n, DecodeError::Missing("tick")))?
            .as_u64()
            .ok_or_else(|| (n, DecodeError::Invalid { field: "tick", reason: "expected a non-negative integer".into() }))?;
        if out.last().is_some_and(|p| p.tick > tick) {
            return Err((n, DecodeError::Invalid { field: "tick", reason: "ticks must not decrease".into() }));
        }
        let command = CommandMessage::from_value(&v).map_err(|e| (n, e))?;
        out.push(RecordedCommand { tick, command });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Playback {
    /// Both arms, every tick.
    pub trace: Trace,
    pub events: Vec<SafetyEvent>,
    pub rejected: Vec<(u64, Rejection)>,
    /// m, over both arms.
    pub rcm: ErrorAccumulator,
}

/// Runs a recording through the full input pipeline, stepping until
/// `settle_ticks` past the last command.
pub fn play(twin: &mut Twin, recording: &[RecordedCommand], settle_ticks: u64) -> Playback {
    let end = recording.last().map_or(0, |c| c.tick) + settle_ticks;
    let mut out = Playback { trace: Trace::default(), events: Vec::new(), rejected: Vec::new(), rcm: ErrorAccumulator::default() };
    let mut next = 0;
    for tick in 0..end {
        while next < recording.len() && recording[next].tick <= tick {
            let c = &recording[next].command;
            if let Err(r) = twin.apply(c) {
                out.rejected.push((c.seq, r));
            }
            next += 1;
        }
        out.events.extend(twin.step());
        for side in Side::BOTH {
            let row = twin.trace_row(side);
            out.rcm.push(row.rcm_error);
            out.trace.rows.push(row);
        }
    }
    out
}
