//! Remote-centre-of-motion parameterisation.
//!
//! The flange lives on a sphere centred at the fulcrum (the hole in the
//! trainer box): latitude `theta`, longitude `phi`, radius `r` (the length of
//! tool outside the box). The tool shaft runs along the flange +z axis, from
//! the flange through the hole to the tip at depth `tool_length - r`.

use core::f64::consts::FRAC_PI_2;

use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{euler_zyx, rot_z, rotation_from_euler_zyx, Pose};

/// Largest distance between the tool axis and the hole accepted by [`record_fulcrum`].
pub const FULCRUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalState {
    /// Latitude, rad.
    pub theta: f64,
    /// Longitude, rad.
    pub phi: f64,
    /// Tool length outside the box, m.
    pub r: f64,
    /// Joint-6 rotation applied on top of the RCM pose, rad.
    pub spin: f64,
    /// 0 = fully open, 1 = fully closed.
    pub grasp: f64,
}

impl SphericalState {
    pub fn new(theta: f64, phi: f64, r: f64) -> Self {
        Self { theta, phi, r, spin: 0.0, grasp: 0.0 }
    }
}

/// Recorded fulcrum and the flange orientation at the moment of recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FulcrumFrame {
    pub hole: Vector3<f64>,
    pub theta0: f64,
    pub phi0: f64,
    pub roll0: f64,
    pub pitch0: f64,
    pub yaw0: f64,
    /// Flange to tool tip, m.
    pub tool_length: f64,
    pub r0: f64,
}

impl FulcrumFrame {
    /// Frame for an ideally aligned tool at `(theta0, phi0, r0)` about `hole`.
    pub fn aligned(hole: Vector3<f64>, theta0: f64, phi0: f64, r0: f64, tool_length: f64) -> Self {
        let (roll0, _, yaw0) = euler_zyx(&aligned_flange_rotation(theta0, phi0));
        Self { hole, theta0, phi0, roll0, pitch0: 0.0, yaw0, tool_length, r0 }
    }

    pub fn initial_state(&self) -> SphericalState {
        SphericalState::new(self.theta0, self.phi0, self.r0)
    }
}

/// Per-tick increments of the spherical state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RcmCommand {
    pub d_theta: f64,
    pub d_phi: f64,
    pub d_r: f64,
    pub d_spin: f64,
    pub d_grasp: f64,
}

impl RcmCommand {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    pub fn is_finite(&self) -> bool {
        [self.d_theta, self.d_phi, self.d_r, self.d_spin, self.d_grasp].iter().all(|v| v.is_finite())
    }
}

impl core::ops::Add for RcmCommand {
    type Output = RcmCommand;
    fn add(self, o: RcmCommand) -> RcmCommand {
        RcmCommand {
            d_theta: self.d_theta + o.d_theta,
            d_phi: self.d_phi + o.d_phi,
            d_r: self.d_r + o.d_r,
            d_spin: self.d_spin + o.d_spin,
            d_grasp: self.d_grasp + o.d_grasp,
        }
    }
}

/// Workspace limits on the spherical state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcmLimits {
    /// `|theta| <= theta_limit`, rad.
    pub theta_limit: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl RcmLimits {
    /// +-80 deg latitude, `r` between 2 cm and 1 cm short of full retraction.
    pub fn for_tool(tool_length: f64) -> Self {
        Self { theta_limit: 80f64.to_radians(), r_min: 0.02, r_max: tool_length - 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_limit > 0.0 && self.theta_limit < FRAC_PI_2) {
            return Err(Error::InvalidConfig("theta limit must lie in (0, pi/2)".into()));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(Error::InvalidConfig("radius limits must satisfy 0 < r_min < r_max".into()));
        }
        Ok(())
    }

    pub fn contains(&self, s: &SphericalState) -> bool {
        s.theta.abs() <= self.theta_limit && s.r >= self.r_min && s.r <= self.r_max
    }
}

/// Which clamps [`step_spherical`] had to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LimitHits {
    pub theta: bool,
    pub r: bool,
    pub grasp: bool,
}

impl LimitHits {
    /// A latitude or radius limit was reached (grasp saturation is benign).
    pub fn workspace(&self) -> bool {
        self.theta || self.r
    }
}

/// Unit vector from the hole towards the flange.
pub fn unit_direction(theta: f64, phi: f64) -> Vector3<f64> {
    let ct = libm::cos(theta);
    Vector3::new(ct * libm::cos(phi), ct * libm::sin(phi), libm::sin(theta))
}

/// Flange orientation whose +z axis points from the flange through the hole
/// with zero pitch: `Rz(phi - pi/2) * Rx(theta + pi/2)`.
pub fn aligned_flange_rotation(theta: f64, phi: f64) -> Rotation3<f64> {
    rotation_from_euler_zyx(theta + FRAC_PI_2, 0.0, phi - FRAC_PI_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FulcrumRecord {
    pub frame: FulcrumFrame,
    /// Rotation to add to joint 6 so the flange pitch becomes zero.
    pub joint6_prerotation: f64,
}

/// Records the fulcrum from the current flange pose with the tool inserted
/// through `hole`. The flange orientation is stored after the joint-6
/// rotation that zeroes its pitch.
pub fn record_fulcrum(flange: &Pose, tool_length: f64, hole: Vector3<f64>) -> Result<FulcrumRecord> {
    let to_hole = hole - flange.position;
    let axis = flange.z_axis();
    let along = to_hole.dot(&axis);
    let miss = if along > 0.0 { (to_hole - axis * along).norm() } else { to_hole.norm() };
    if miss > FULCRUM_TOLERANCE {
        return Err(Error::FulcrumMisalignment { miss });
    }
    let probe = FulcrumFrame { hole, theta0: 0.0, phi0: 0.0, roll0: 0.0, pitch0: 0.0, yaw0: 0.0, tool_length, r0: 0.0 };
    let s0 = spherical_from_position(&probe, &flange.position)?;
    if !(tool_length > s0.r) {
        return Err(Error::ToolRetracted { r: s0.r, tool_length });
    }
    let ideal = aligned_flange_rotation(s0.theta, s0.phi);
    let m = flange.rotation.inverse() * ideal;
    let prerotation = libm::atan2(m.matrix()[(1, 0)], m.matrix()[(0, 0)]);
    let (roll0, _pitch, yaw0) = euler_zyx(&(flange.rotation * rot_z(prerotation)));
    Ok(FulcrumRecord {
        frame: FulcrumFrame {
            hole,
            theta0: s0.theta,
            phi0: s0.phi,
            roll0,
            pitch0: 0.0,
            yaw0,
            tool_length,
            r0: s0.r,
        },
        joint6_prerotation: prerotation,
    })
}

/// Adds the command to the state, clamping latitude, radius and grasp.
pub fn step_spherical(s: &SphericalState, c: &RcmCommand, limits: &RcmLimits) -> (SphericalState, LimitHits) {
    let clamp = |v: f64, lo: f64, hi: f64, hit: &mut bool| {
        if v < lo {
            *hit = true;
            lo
        } else if v > hi {
            *hit = true;
            hi
        } else {
            v
        }
    };
    let mut theta_hit = false;
    let mut r_hit = false;
    let mut grasp_hit = false;
    let next = SphericalState {
        theta: clamp(s.theta + c.d_theta, -limits.theta_limit, limits.theta_limit, &mut theta_hit),
        phi: s.phi + c.d_phi,
        r: clamp(s.r + c.d_r, limits.r_min, limits.r_max, &mut r_hit),
        spin: s.spin + c.d_spin,
        grasp: clamp(s.grasp + c.d_grasp, 0.0, 1.0, &mut grasp_hit),
    };
    (next, LimitHits { theta: theta_hit, r: r_hit, grasp: grasp_hit })
}

/// Flange position on the sphere about the hole.
pub fn flange_position(f: &FulcrumFrame, s: &SphericalState) -> Vector3<f64> {
    let ct = libm::cos(s.theta);
    Vector3::new(
        f.hole.x + s.r * ct * libm::cos(s.phi),
        f.hole.y + s.r * ct * libm::sin(s.phi),
        f.hole.z + s.r * libm::sin(s.theta),
    )
}

/// Inverse of [`flange_position`]; spin and grasp are zero in the result.
pub fn spherical_from_position(f: &FulcrumFrame, p: &Vector3<f64>) -> Result<SphericalState> {
    let d = p - f.hole;
    let r = d.norm();
    if !(r > 0.0) {
        return Err(Error::UndefinedDirection);
    }
    let theta = libm::asin((d.z / r).clamp(-1.0, 1.0));
    let phi = libm::atan2(d.y, d.x);
    Ok(SphericalState::new(theta, phi, r))
}

/// ZYX Euler angles of the flange: roll follows latitude, yaw follows
/// longitude, pitch stays at its recorded value.
pub fn flange_orientation(f: &FulcrumFrame, s: &SphericalState) -> (f64, f64, f64) {
    (f.roll0 + (s.theta - f.theta0), f.pitch0, f.yaw0 + (s.phi - f.phi0))
}

/// Flange pose for the spherical state, without the joint-6 spin offset.
pub fn flange_pose(f: &FulcrumFrame, s: &SphericalState) -> Pose {
    let (roll, pitch, yaw) = flange_orientation(f, s);
    Pose::from_euler_zyx(flange_position(f, s), roll, pitch, yaw)
}

/// Tool tip: on the shaft, `tool_length - r` beyond the hole.
pub fn tip_position(f: &FulcrumFrame, s: &SphericalState) -> Result<Vector3<f64>> {
    if !(f.tool_length > s.r) {
        return Err(Error::ToolRetracted { r: s.r, tool_length: f.tool_length });
    }
    let u = unit_direction(s.theta, s.phi);
    Ok(f.hole - u * (f.tool_length - s.r))
}

/// Spherical coordinates (spin and grasp zero) that place the tip at `tip`.
pub fn spherical_for_tip(f: &FulcrumFrame, tip: &Vector3<f64>) -> Result<SphericalState> {
    let d = f.hole - tip;
    let depth = d.norm();
    if !(depth > 0.0) {
        return Err(Error::UndefinedDirection);
    }
    let r = f.tool_length - depth;
    let theta = libm::asin((d.z / depth).clamp(-1.0, 1.0));
    let phi = libm::atan2(d.y, d.x);
    Ok(SphericalState::new(theta, phi, r))
}

/// First-order spherical increment producing tip displacement `d_tip`.
///
/// The tip Jacobian w.r.t. `(theta, phi, r)` has orthogonal columns
/// `-(L - r) e_theta`, `-(L - r) cos(theta) e_phi` and `u`, so the solve is
/// three projections. The negative lateral gains are the fulcrum inversion.
pub fn tip_delta_to_command(f: &FulcrumFrame, s: &SphericalState, d_tip: &Vector3<f64>) -> Result<RcmCommand> {
    let depth = f.tool_length - s.r;
    let (st, ct) = (libm::sin(s.theta), libm::cos(s.theta));
    let (sp, cp) = (libm::sin(s.phi), libm::cos(s.phi));
    if depth < 1e-9 || ct.abs() < 1e-9 {
        return Err(Error::DegenerateDirection);
    }
    let u = Vector3::new(ct * cp, ct * sp, st);
    let e_theta = Vector3::new(-st * cp, -st * sp, ct);
    let e_phi = Vector3::new(-sp, cp, 0.0);
    Ok(RcmCommand {
        d_theta: -e_theta.dot(d_tip) / depth,
        d_phi: -e_phi.dot(d_tip) / (depth * ct),
        d_r: u.dot(d_tip),
        d_spin: 0.0,
        d_grasp: 0.0,
    })
}

/// Distance from the recorded hole to the tool axis through the flange.
pub fn rcm_error(f: &FulcrumFrame, flange: &Pose) -> f64 {
    let axis = flange.z_axis();
    let d = f.hole - flange.position;
    (d - axis * d.dot(&axis)).norm()
}
