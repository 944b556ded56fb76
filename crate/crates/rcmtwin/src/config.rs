//! JSON configuration files.
//!
//! `robot.json` holds the kinematic table, `workspace.json` the trainer box,
//! holes, instrument and arm placement plus optional tuning sections. All
//! lengths are metres and all angles radians. The defaults shipped in
//! `config/` are embedded in the binary and reproduce
//! [`WorldConfig::trainer_default`] exactly.

use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rcmtwin_core::bench::{BenchConfig, ConeParams, PyramidParams};
use rcmtwin_core::kinematics::{euler_zyx, rot_z, DhRow, JointVector, Pose, RobotModel, JOINT_COUNT};
use rcmtwin_core::rcm::RcmLimits;
use rcmtwin_core::safety::SafetyLimits;
use rcmtwin_core::servo_sim::{ArmSetup, ServoConfig, TrainerBox, WorldConfig};
use rcmtwin_core::teleop::{BaseRates, DeadZoneConfig, TeleopConfig};
use rcmtwin_core::Side;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ROBOT: &str = include_str!("../config/robot.json");
pub const DEFAULT_WORKSPACE: &str = include_str!("../config/workspace.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFile {
    /// `[a, d, alpha, theta_offset]` per joint.
    pub dh: [[f64; 4]; JOINT_COUNT],
    /// `[min, max]` per joint.
    pub joint_limits: [[f64; 2]; JOINT_COUNT],
    pub velocity_limits: [f64; JOINT_COUNT],
    /// Tool tip in the flange frame. Must be `[0, 0, tool_length]`.
    pub tcp_offset: [f64; 3],
}

impl RobotFile {
    pub fn from_model(m: &RobotModel) -> Self {
        Self {
            dh: m.dh.map(|r| [r.a, r.d, r.alpha, r.theta_offset]),
            joint_limits: m.joint_limits.map(|(lo, hi)| [lo, hi]),
            velocity_limits: m.velocity_limits,
            tcp_offset: m.tcp_offset.into(),
        }
    }

    pub fn to_model(&self) -> Result<RobotModel> {
        Ok(RobotModel::new(
            self.dh.map(|r| DhRow::new(r[0], r[1], r[2], r[3])),
            self.joint_limits.map(|l| (l[0], l[1])),
            self.velocity_limits,
            Vector3::from(self.tcp_offset),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmFile {
    pub side: String,
    /// Base origin in the world frame.
    pub base: [f64; 3],
    /// Base rotation about world z.
    pub base_yaw: f64,
    /// Index into `holes`.
    pub hole: usize,
    pub theta0: f64,
    pub phi0: f64,
    pub r0: f64,
    /// Joint seed for the start-up IK; picks the arm configuration.
    pub seed_q: [f64; JOINT_COUNT],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyFile {
    pub rcm_error_max: f64,
    pub singularity_sigma_min: f64,
    pub joint_margin: f64,
    pub speed_margin: f64,
    pub reach_max: f64,
}

impl Default for SafetyFile {
    fn default() -> Self {
        let s = SafetyLimits::default();
        Self {
            rcm_error_max: s.rcm_error_max,
            singularity_sigma_min: s.singularity_sigma_min,
            joint_margin: s.joint_margin,
            speed_margin: s.speed_margin,
            reach_max: s.reach_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoFile {
    pub control_rate: f64,
    pub lookahead_time: f64,
    /// Defaults to `1 / lookahead_time`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    pub max_joint_vel: f64,
}

impl Default for ServoFile {
    fn default() -> Self {
        let s = ServoConfig::default();
        Self { control_rate: s.control_rate, lookahead_time: s.lookahead_time, gain: None, max_joint_vel: s.max_joint_vel }
    }
}

impl ServoFile {
    pub fn to_config(&self) -> ServoConfig {
        let mut cfg = ServoConfig::new(self.control_rate, self.lookahead_time);
        cfg.max_joint_vel = self.max_joint_vel;
        if let Some(g) = self.gain {
            cfg.gain = g;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeleopFile {
    /// Tip speed at factor 1, m/s.
    pub tip_linear: f64,
    /// Spin rate at factor 1, rad/s.
    pub spin: f64,
    /// Grasp rate at factor 1, full strokes per second.
    pub grasp: f64,
    pub dead_zone_linear: f64,
    pub dead_zone_angular: f64,
    pub stylus_scale: f64,
}

impl Default for TeleopFile {
    fn default() -> Self {
        Self::from_config(&TeleopConfig::default())
    }
}

impl TeleopFile {
    pub fn from_config(c: &TeleopConfig) -> Self {
        Self {
            tip_linear: c.rates.tip_linear,
            spin: c.rates.spin,
            grasp: c.rates.grasp,
            dead_zone_linear: c.dead_zone.linear_threshold,
            dead_zone_angular: c.dead_zone.angular_threshold,
            stylus_scale: c.stylus_scale,
        }
    }

    pub fn to_config(&self) -> TeleopConfig {
        TeleopConfig {
            rates: BaseRates { tip_linear: self.tip_linear, spin: self.spin, grasp: self.grasp },
            dead_zone: DeadZoneConfig {
                linear_threshold: self.dead_zone_linear,
                angular_threshold: self.dead_zone_angular,
            },
            stylus_scale: self.stylus_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeFile {
    pub top_radius: f64,
    pub bottom_radius: f64,
    pub depth_top: f64,
    pub depth_bottom: f64,
    pub turns: f64,
    pub samples_per_turn: usize,
    pub max_spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidFile {
    pub top_side: f64,
    pub bottom_side: f64,
    pub depth_top: f64,
    pub depth_bottom: f64,
    pub loops: usize,
    pub samples_per_side: usize,
    pub max_spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    /// Waypoint rate of the reference trajectories, Hz.
    pub rate: f64,
    pub lead_in_speed: f64,
    pub settle_time: f64,
    pub cone: ConeFile,
    pub pyramid: PyramidFile,
}

impl Default for BenchFile {
    fn default() -> Self {
        BenchSettings::default().into()
    }
}

/// Benchmark run settings with both trajectory shapes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BenchSettings {
    pub run: BenchConfig,
    pub cone: ConeParams,
    pub pyramid: PyramidParams,
}

impl From<BenchSettings> for BenchFile {
    fn from(b: BenchSettings) -> Self {
        let (c, p) = (b.cone, b.pyramid);
        Self {
            rate: b.run.rate,
            lead_in_speed: b.run.lead_in_speed,
            settle_time: b.run.settle_time,
            cone: ConeFile {
                top_radius: c.top_radius,
                bottom_radius: c.bottom_radius,
                depth_top: c.depth_top,
                depth_bottom: c.depth_bottom,
                turns: c.turns,
                samples_per_turn: c.samples_per_turn,
                max_spacing: c.max_spacing,
            },
            pyramid: PyramidFile {
                top_side: p.top_side,
                bottom_side: p.bottom_side,
                depth_top: p.depth_top,
                depth_bottom: p.depth_bottom,
                loops: p.loops,
                samples_per_side: p.samples_per_side,
                max_spacing: p.max_spacing,
            },
        }
    }
}

impl From<BenchFile> for BenchSettings {
    fn from(b: BenchFile) -> Self {
        let (c, p) = (b.cone, b.pyramid);
        Self {
            run: BenchConfig { rate: b.rate, lead_in_speed: b.lead_in_speed, settle_time: b.settle_time },
            cone: ConeParams {
                top_radius: c.top_radius,
                bottom_radius: c.bottom_radius,
                depth_top: c.depth_top,
                depth_bottom: c.depth_bottom,
                turns: c.turns,
                samples_per_turn: c.samples_per_turn,
                max_spacing: c.max_spacing,
            },
            pyramid: PyramidParams {
                top_side: p.top_side,
                bottom_side: p.bottom_side,
                depth_top: p.depth_top,
                depth_bottom: p.depth_bottom,
                loops: p.loops,
                samples_per_side: p.samples_per_side,
                max_spacing: p.max_spacing,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceFile {
    /// Full outer size of the axis-aligned box; `null` disables box
    /// collision checks.
    pub box_dims: Option<[f64; 3]>,
    /// Box centre in the world frame; defaults to resting on `z = 0`
    /// centred on the origin.
    #[serde(default)]
    pub box_center: Option<[f64; 3]>,
    /// Hole centres in the world frame.
    pub holes: Vec<[f64; 3]>,
    pub hole_diameter: f64,
    pub tool_diameter: f64,
    pub tool_length: f64,
    /// `|theta| <= theta_limit`.
    pub theta_limit: f64,
    /// `[r_min, r_max]`.
    pub r_limits: [f64; 2],
    pub arms: [ArmFile; 2],
    #[serde(default)]
    pub safety: SafetyFile,
    #[serde(default)]
    pub servo: ServoFile,
    #[serde(default)]
    pub teleop: TeleopFile,
    #[serde(default)]
    pub bench: BenchFile,
}

/// Everything the binary needs: the simulated world plus input and
/// benchmark tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinConfig {
    pub world: WorldConfig,
    pub teleop: TeleopConfig,
    pub bench: BenchSettings,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self { world: WorldConfig::trainer_default(), teleop: TeleopConfig::default(), bench: BenchSettings::default() }
    }
}

impl TwinConfig {
    /// Loads the given files, falling back to the embedded defaults.
    pub fn load(robot: Option<&Path>, workspace: Option<&Path>) -> Result<Self> {
        let robot: RobotFile = match robot {
            Some(p) => read_json(p)?,
            None => parse_embedded(DEFAULT_ROBOT, "robot.json")?,
        };
        let workspace: WorkspaceFile = match workspace {
            Some(p) => read_json(p)?,
            None => parse_embedded(DEFAULT_WORKSPACE, "workspace.json")?,
        };
        Self::from_files(&robot, &workspace)
    }

    pub fn from_files(robot: &RobotFile, ws: &WorkspaceFile) -> Result<Self> {
        let model = robot.to_model()?;
        let expected = Vector3::new(0.0, 0.0, ws.tool_length);
        if (model.tcp_offset - expected).norm() > 1e-12 {
            return Err(Error::Config(format!(
                "tcp_offset {:?} must be [0, 0, tool_length] for a straight instrument",
                robot.tcp_offset
            )));
        }
        let mut arms = Vec::with_capacity(2);
        for (a, want) in ws.arms.iter().zip(Side::BOTH) {
            let side = Side::parse(&a.side).ok_or_else(|| Error::Config(format!("unknown arm side `{}`", a.side)))?;
            if side != want {
                return Err(Error::Config("arms must be listed left then right".into()));
            }
            let hole = ws
                .holes
                .get(a.hole)
                .ok_or_else(|| Error::Config(format!("{side} arm: hole index {} out of range", a.hole)))?;
            arms.push(ArmSetup {
                side,
                base: Pose::new(Vector3::from(a.base), rot_z(a.base_yaw)),
                hole: Vector3::from(*hole),
                theta0: a.theta0,
                phi0: a.phi0,
                r0: a.r0,
                seed_q: JointVector::from_row_slice(&a.seed_q),
            });
        }
        let s = &ws.safety;
        let world = WorldConfig {
            model,
            servo: ws.servo.to_config(),
            safety: SafetyLimits {
                rcm_error_max: s.rcm_error_max,
                singularity_sigma_min: s.singularity_sigma_min,
                joint_margin: s.joint_margin,
                speed_margin: s.speed_margin,
                reach_max: s.reach_max,
            },
            rcm_limits: RcmLimits { theta_limit: ws.theta_limit, r_min: ws.r_limits[0], r_max: ws.r_limits[1] },
            tool_length: ws.tool_length,
            trainer_box: ws.box_dims.map(|dims| TrainerBox {
                pose: Pose::new(
                    ws.box_center.map_or(Vector3::new(0.0, 0.0, dims[2] / 2.0), Vector3::from),
                    Rotation3::identity(),
                ),
                half_extents: Vector3::from(dims) / 2.0,
                hole_radius: ws.hole_diameter / 2.0,
                tool_radius: ws.tool_diameter / 2.0,
            }),
            arms: [arms[0], arms[1]],
        };
        world.validate()?;
        let teleop = ws.teleop.to_config();
        if !(teleop.rates.tip_linear > 0.0 && teleop.rates.spin > 0.0 && teleop.rates.grasp > 0.0) {
            return Err(Error::Config("teleop rates must be positive".into()));
        }
        if !(teleop.dead_zone.linear_threshold >= 0.0 && teleop.dead_zone.angular_threshold >= 0.0) {
            return Err(Error::Config("dead zone thresholds must be non-negative".into()));
        }
        Ok(Self { world, teleop, bench: ws.bench.into() })
    }

    /// Inverse of [`from_files`](Self::from_files) for configs whose boxes
    /// are axis-aligned and whose arms each use their own hole.
    pub fn to_files(&self) -> (RobotFile, WorkspaceFile) {
        let w = &self.world;
        let arm = |a: &ArmSetup, i: usize| ArmFile {
            side: a.side.as_str().into(),
            base: a.base.position.into(),
            base_yaw: euler_zyx(&a.base.rotation).2,
            hole: i,
            theta0: a.theta0,
            phi0: a.phi0,
            r0: a.r0,
            seed_q: a.seed_q.into(),
        };
        let (hole_d, tool_d) = w.trainer_box.map_or((0.008, 0.005), |b| (2.0 * b.hole_radius, 2.0 * b.tool_radius));
        let ws = WorkspaceFile {
            box_dims: w.trainer_box.map(|b| (b.half_extents * 2.0).into()),
            box_center: w.trainer_box.map(|b| b.pose.position.into()),
            holes: w.arms.iter().map(|a| a.hole.into()).collect(),
            hole_diameter: hole_d,
            tool_diameter: tool_d,
            tool_length: w.tool_length,
            theta_limit: w.rcm_limits.theta_limit,
            r_limits: [w.rcm_limits.r_min, w.rcm_limits.r_max],
            arms: [arm(&w.arms[0], 0), arm(&w.arms[1], 1)],
            safety: SafetyFile {
                rcm_error_max: w.safety.rcm_error_max,
                singularity_sigma_min: w.safety.singularity_sigma_min,
                joint_margin: w.safety.joint_margin,
                speed_margin: w.safety.speed_margin,
                reach_max: w.safety.reach_max,
            },
            servo: ServoFile {
                control_rate: w.servo.control_rate,
                lookahead_time: w.servo.lookahead_time,
                gain: (w.servo.gain != 1.0 / w.servo.lookahead_time).then_some(w.servo.gain),
                max_joint_vel: w.servo.max_joint_vel,
            },
            teleop: TeleopFile::from_config(&self.teleop),
            bench: self.bench.into(),
        };
        (RobotFile::from_model(&w.model), ws)
    }

    /// Replaces the control rate and lookahead, keeping the gain tied to
    /// the new lookahead.
    pub fn with_servo(mut self, control_rate: Option<f64>, lookahead: Option<f64>) -> Result<Self> {
        if control_rate.is_none() && lookahead.is_none() {
            return Ok(self);
        }
        let s = &self.world.servo;
        let mut next = ServoConfig::new(control_rate.unwrap_or(s.control_rate), lookahead.unwrap_or(s.lookahead_time));
        next.max_joint_vel = s.max_joint_vel;
        next.validate()?;
        self.world.servo = next;
        Ok(self)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

fn parse_embedded<T: DeserializeOwned>(text: &str, name: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| Error::Json { path: name.into(), source })
}
