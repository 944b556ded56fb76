//! Operator input mapping: keyboard scheme, stylus dead zone, free state,
//! speed scaling, and the per-arm input state that turns held keys or
//! stylus samples into one [`RcmCommand`] per control tick.

use core::fmt;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rcm::{tip_delta_to_command, tip_position, unit_direction, FulcrumFrame, RcmCommand, SphericalState};
use crate::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    In,
    Out,
    Left,
    Right,
    Up,
    Down,
    RotateCW,
    RotateCCW,
    Grasp,
    Release,
    SpeedUp,
    SpeedDown,
    None,
}

impl Action {
    pub const MOTIONS: [Action; 10] = [
        Action::In,
        Action::Out,
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::RotateCW,
        Action::RotateCCW,
        Action::Grasp,
        Action::Release,
    ];

    fn bit(self) -> u16 {
        match self {
            Action::In => 1 << 0,
            Action::Out => 1 << 1,
            Action::Left => 1 << 2,
            Action::Right => 1 << 3,
            Action::Up => 1 << 4,
            Action::Down => 1 << 5,
            Action::RotateCW => 1 << 6,
            Action::RotateCCW => 1 << 7,
            Action::Grasp => 1 << 8,
            Action::Release => 1 << 9,
            Action::SpeedUp | Action::SpeedDown | Action::None => 0,
        }
    }
}

/// A keyboard key as far as the control scheme is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Key {
    /// Letter key; case is ignored.
    Char(char),
    LCtrl,
    LAlt,
    RCtrl,
    RAlt,
}

impl Key {
    /// Parses `"W"`, `"w"`, `"LCtrl"`, `"RAlt"`, ...
    pub fn parse(s: &str) -> Option<Key> {
        match s {
            "LCtrl" => Some(Key::LCtrl),
            "LAlt" => Some(Key::LAlt),
            "RCtrl" => Some(Key::RCtrl),
            "RAlt" => Some(Key::RAlt),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_alphanumeric() => Some(Key::Char(c.to_ascii_uppercase())),
                    _ => None,
                }
            }
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Char(c) => write!(f, "{}", c.to_ascii_uppercase()),
            Key::LCtrl => f.write_str("LCtrl"),
            Key::LAlt => f.write_str("LAlt"),
            Key::RCtrl => f.write_str("RCtrl"),
            Key::RAlt => f.write_str("RAlt"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TeleopIntent {
    pub side: Side,
    pub action: Action,
}

/// All 24 mapped keys, left tool first.
pub const KEY_TABLE: [(Key, Side, Action); 24] = [
    (Key::Char('W'), Side::Left, Action::In),
    (Key::Char('S'), Side::Left, Action::Out),
    (Key::Char('A'), Side::Left, Action::Left),
    (Key::Char('D'), Side::Left, Action::Right),
    (Key::Char('Q'), Side::Left, Action::Up),
    (Key::Char('E'), Side::Left, Action::Down),
    (Key::Char('C'), Side::Left, Action::RotateCW),
    (Key::Char('X'), Side::Left, Action::RotateCCW),
    (Key::Char('R'), Side::Left, Action::Grasp),
    (Key::Char('F'), Side::Left, Action::Release),
    (Key::LCtrl, Side::Left, Action::SpeedUp),
    (Key::LAlt, Side::Left, Action::SpeedDown),
    (Key::Char('I'), Side::Right, Action::In),
    (Key::Char('K'), Side::Right, Action::Out),
    (Key::Char('J'), Side::Right, Action::Left),
    (Key::Char('L'), Side::Right, Action::Right),
    (Key::Char('U'), Side::Right, Action::Up),
    (Key::Char('O'), Side::Right, Action::Down),
    (Key::Char('M'), Side::Right, Action::RotateCW),
    (Key::Char('N'), Side::Right, Action::RotateCCW),
    (Key::Char('Y'), Side::Right, Action::Grasp),
    (Key::Char('H'), Side::Right, Action::Release),
    (Key::RCtrl, Side::Right, Action::SpeedUp),
    (Key::RAlt, Side::Right, Action::SpeedDown),
];

/// Keyboard scheme lookup; `None` for keys outside the scheme.
pub fn map_key(key: Key) -> Option<TeleopIntent> {
    let key = match key {
        Key::Char(c) => Key::Char(c.to_ascii_uppercase()),
        other => other,
    };
    KEY_TABLE
        .iter()
        .find(|(k, _, _)| *k == key)
        .map(|&(_, side, action)| TeleopIntent { side, action })
}

/// Discrete speed slider: seven levels with geometrically spaced factors
/// from 0.25 to 2.0 (factor 1 at level 4).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeedScale {
    level: u8,
}

impl SpeedScale {
    pub const LEVELS: u8 = 7;
    pub const FACTOR_MIN: f64 = 0.25;
    pub const FACTOR_MAX: f64 = 2.0;
    pub const DEFAULT_LEVEL: u8 = 4;

    pub fn new(level: u8) -> Self {
        Self { level: level.min(Self::LEVELS - 1) }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn factor(&self) -> f64 {
        let span = libm::log2(Self::FACTOR_MAX / Self::FACTOR_MIN);
        Self::FACTOR_MIN * libm::exp2(span * self.level as f64 / (Self::LEVELS - 1) as f64)
    }

    pub fn up(&mut self) {
        *self = Self::new(self.level.saturating_add(1));
    }

    pub fn down(&mut self) {
        *self = Self::new(self.level.saturating_sub(1));
    }
}

impl Default for SpeedScale {
    fn default() -> Self {
        Self::new(Self::DEFAULT_LEVEL)
    }
}

/// Command rates at speed factor 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseRates {
    /// Tip translation (lateral and insertion), m/s.
    pub tip_linear: f64,
    /// Joint-6 spin, rad/s.
    pub spin: f64,
    /// Grasp fraction per second.
    pub grasp: f64,
}

impl Default for BaseRates {
    fn default() -> Self {
        Self { tip_linear: 0.010, spin: 45f64.to_radians(), grasp: 1.0 }
    }
}

/// Viewing frame of the tool: `(axis, up, right)`, where `axis` points from
/// the hole towards the tip and `up` is world +z made orthogonal to it.
pub fn tool_view_frame(s: &SphericalState) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let axis = -unit_direction(s.theta, s.phi);
    let up = (Vector3::z() - axis * axis.z).normalize();
    let right = axis.cross(&up);
    (axis, up, right)
}

/// One tick's command for a single intent.
pub fn intent_to_command(
    intent: &TeleopIntent,
    speed: &SpeedScale,
    tick_dt: f64,
    rates: &BaseRates,
    frame: &FulcrumFrame,
    state: &SphericalState,
) -> Result<RcmCommand> {
    if !(tick_dt > 0.0) {
        return Err(Error::InvalidArgument("tick dt must be positive"));
    }
    let k = speed.factor() * tick_dt;
    let step = rates.tip_linear * k;
    let lateral = |dir: Vector3<f64>| tip_delta_to_command(frame, state, &(dir * step));
    let (_, up, right) = tool_view_frame(state);
    let zero = RcmCommand::zero();
    Ok(match intent.action {
        Action::In => RcmCommand { d_r: -step, ..zero },
        Action::Out => RcmCommand { d_r: step, ..zero },
        Action::Left => lateral(-right)?,
        Action::Right => lateral(right)?,
        Action::Up => lateral(up)?,
        Action::Down => lateral(-up)?,
        Action::RotateCW => RcmCommand { d_spin: rates.spin * k, ..zero },
        Action::RotateCCW => RcmCommand { d_spin: -rates.spin * k, ..zero },
        Action::Grasp => RcmCommand { d_grasp: rates.grasp * k, ..zero },
        Action::Release => RcmCommand { d_grasp: -rates.grasp * k, ..zero },
        Action::SpeedUp | Action::SpeedDown | Action::None => zero,
    })
}

/// One reading of a 6-DOF stylus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StylusSample {
    pub position: Vector3<f64>,
    /// `(roll, pitch, yaw)`, rad.
    pub orientation: [f64; 3],
    pub button1: bool,
    pub button2: bool,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadZoneConfig {
    pub linear_threshold: f64,
    pub angular_threshold: f64,
}

impl Default for DeadZoneConfig {
    fn default() -> Self {
        Self { linear_threshold: 0.002, angular_threshold: 2f64.to_radians() }
    }
}

/// Stylus displacement after the dead zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StylusDelta {
    pub position: Vector3<f64>,
    pub angles: [f64; 3],
}

impl StylusDelta {
    pub fn zero() -> Self {
        Self { position: Vector3::zeros(), angles: [0.0; 3] }
    }
}

fn wrap_angle(a: f64) -> f64 {
    libm::remainder(a, core::f64::consts::TAU)
}

/// Dead-zone filter relative to `reference`. Inside the zone the output is
/// zero and inactive; outside, the threshold is subtracted radially
/// (position) and per angle, so the output is continuous at the boundary.
pub fn dead_zone_filter(reference: &StylusSample, current: &StylusSample, cfg: &DeadZoneConfig) -> (StylusDelta, bool) {
    let dp = current.position - reference.position;
    let da: [f64; 3] = core::array::from_fn(|i| wrap_angle(current.orientation[i] - reference.orientation[i]));
    let dp_norm = dp.norm();
    let inside = dp_norm < cfg.linear_threshold && da.iter().all(|a| a.abs() < cfg.angular_threshold);
    if inside {
        return (StylusDelta::zero(), false);
    }
    let position = if dp_norm > cfg.linear_threshold { dp * ((dp_norm - cfg.linear_threshold) / dp_norm) } else { Vector3::zeros() };
    let angles = da.map(|a| {
        let excess = a.abs() - cfg.angular_threshold;
        if excess > 0.0 { excess.copysign(a) } else { 0.0 }
    });
    (StylusDelta { position, angles }, true)
}

/// Both stylus buttons held: the operator has clutched out.
pub fn free_state(sample: &StylusSample) -> bool {
    sample.button1 && sample.button2
}

/// Tuning of the per-arm input path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeleopConfig {
    pub rates: BaseRates,
    pub dead_zone: DeadZoneConfig,
    /// Tip displacement per metre of stylus displacement.
    pub stylus_scale: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self { rates: BaseRates::default(), dead_zone: DeadZoneConfig::default(), stylus_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct StylusTrack {
    reference: Option<StylusSample>,
    latest: Option<StylusSample>,
    /// Tip position and spin when the reference was taken.
    anchor: Option<(Vector3<f64>, f64)>,
    free: bool,
}

/// Input state of one arm: held keys, speed slider and stylus clutch.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmInput {
    pub side: Side,
    pub speed: SpeedScale,
    held: u16,
    stylus: StylusTrack,
}

impl ArmInput {
    pub fn new(side: Side) -> Self {
        Self { side, speed: SpeedScale::default(), held: 0, stylus: StylusTrack::default() }
    }

    /// Applies a press or release. Speed keys act on the press edge only.
    pub fn action(&mut self, action: Action, pressed: bool) {
        match (action, pressed) {
            (Action::SpeedUp, true) => self.speed.up(),
            (Action::SpeedDown, true) => self.speed.down(),
            (a, true) => self.held |= a.bit(),
            (a, false) => self.held &= !a.bit(),
        }
    }

    pub fn is_held(&self, action: Action) -> bool {
        action.bit() != 0 && self.held & action.bit() != 0
    }

    pub fn release_all(&mut self) {
        self.held = 0;
    }

    pub fn is_free(&self) -> bool {
        self.stylus.free
    }

    pub fn stylus(&mut self, sample: StylusSample) {
        self.stylus.latest = Some(sample);
        if free_state(&sample) {
            self.stylus.free = true;
            self.stylus.reference = None;
            self.stylus.anchor = None;
        } else if self.stylus.free || self.stylus.reference.is_none() {
            self.stylus.free = false;
            self.stylus.reference = Some(sample);
            self.stylus.anchor = None;
        }
    }

    /// Drops the stylus reference; the next sample re-anchors.
    pub fn reset_stylus(&mut self) {
        self.stylus = StylusTrack::default();
    }

    /// This tick's command: the sum of all held keys plus the stylus path.
    pub fn command(&mut self, dt: f64, cfg: &TeleopConfig, frame: &FulcrumFrame, state: &SphericalState) -> Result<RcmCommand> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("tick dt must be positive"));
        }
        let mut total = RcmCommand::zero();
        if self.held != 0 {
            // Lateral keys share one tip delta so simultaneous keys combine linearly.
            let (_, up, right) = tool_view_frame(state);
            let mut dir = Vector3::zeros();
            for action in Action::MOTIONS {
                if !self.is_held(action) {
                    continue;
                }
                match action {
                    Action::Left => dir -= right,
                    Action::Right => dir += right,
                    Action::Up => dir += up,
                    Action::Down => dir -= up,
                    _ => total = total + intent_to_command(&TeleopIntent { side: self.side, action }, &self.speed, dt, &cfg.rates, frame, state)?,
                }
            }
            if dir != Vector3::zeros() {
                let step = cfg.rates.tip_linear * self.speed.factor() * dt;
                total = total + tip_delta_to_command(frame, state, &(dir * step))?;
            }
        }
        total = total + self.stylus_command(dt, cfg, frame, state)?;
        Ok(total)
    }

    fn stylus_command(&mut self, dt: f64, cfg: &TeleopConfig, frame: &FulcrumFrame, state: &SphericalState) -> Result<RcmCommand> {
        let track = &mut self.stylus;
        let (Some(reference), Some(latest)) = (track.reference, track.latest) else {
            return Ok(RcmCommand::zero());
        };
        if track.free {
            return Ok(RcmCommand::zero());
        }
        let tip_now = tip_position(frame, state)?;
        let (anchor_tip, anchor_spin) = *track.anchor.get_or_insert((tip_now, state.spin));
        let (delta, active) = dead_zone_filter(&reference, &latest, &cfg.dead_zone);
        let k = self.speed.factor() * dt;

        let mut step = anchor_tip + delta.position * cfg.stylus_scale - tip_now;
        let max_step = cfg.rates.tip_linear * k;
        if step.norm() > max_step {
            step *= max_step / step.norm();
        }
        let mut cmd = if step == Vector3::zeros() { RcmCommand::zero() } else { tip_delta_to_command(frame, state, &step)? };

        let max_spin = cfg.rates.spin * k;
        cmd.d_spin = (anchor_spin + delta.angles[0] - state.spin).clamp(-max_spin, max_spin);

        if !active {
            let g = cfg.rates.grasp * k;
            cmd.d_grasp = match (latest.button1, latest.button2) {
                (true, false) => g,
                (false, true) => -g,
                _ => 0.0,
            };
        }
        Ok(cmd)
    }
}
