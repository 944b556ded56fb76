//! Serial-chain kinematics for a six-joint arm described by standard
//! Denavit-Hartenberg rows.
//!
//! Everything here is a pure function of its inputs. Poses are expressed in
//! the arm's base frame; angular velocities are spatial (base-frame) vectors.

use core::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Rotation3, SMatrix, SVector, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Joint positions (rad) or joint velocities (rad/s).
pub type JointVector = Vector6<f64>;

pub const JOINT_COUNT: usize = 6;

/// Central-difference step used by [`jacobian`].
pub const JACOBIAN_STEP: f64 = 1e-6;
/// Below this smallest singular value the velocity solve switches to damped least squares.
pub const DAMPING_THRESHOLD: f64 = 1e-4;
/// Damping factor used once [`DAMPING_THRESHOLD`] is crossed.
pub const DAMPING_LAMBDA: f64 = 0.01;

/// One standard DH row: `Rz(theta + theta_offset) * Tz(d) * Tx(a) * Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhRow {
    pub const fn new(a: f64, d: f64, alpha: f64, theta_offset: f64) -> Self {
        Self { a, d, alpha, theta_offset }
    }

    /// Homogeneous transform of this link for joint angle `theta`.
    pub fn transform(&self, theta: f64) -> Pose {
        let (st, ct) = (libm::sin(theta + self.theta_offset), libm::cos(theta + self.theta_offset));
        let (sa, ca) = (libm::sin(self.alpha), libm::cos(self.alpha));
        #[rustfmt::skip]
        let m = Matrix3::new(
            ct, -st * ca,  st * sa,
            st,  ct * ca, -ct * sa,
            0.0,      sa,       ca,
        );
        Pose {
            position: Vector3::new(self.a * ct, self.a * st, self.d),
            rotation: Rotation3::from_matrix_unchecked(m),
        }
    }
}

/// Kinematic description of the manipulator plus the tool mounted on it.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub dh: [DhRow; JOINT_COUNT],
    /// `(min, max)` per joint, rad.
    pub joint_limits: [(f64, f64); JOINT_COUNT],
    /// Per-joint speed limit, rad/s.
    pub velocity_limits: [f64; JOINT_COUNT],
    /// Tool tip expressed in the flange frame, m.
    pub tcp_offset: Vector3<f64>,
}

impl RobotModel {
    pub fn new(
        dh: [DhRow; JOINT_COUNT],
        joint_limits: [(f64, f64); JOINT_COUNT],
        velocity_limits: [f64; JOINT_COUNT],
        tcp_offset: Vector3<f64>,
    ) -> Result<Self> {
        let model = Self { dh, joint_limits, velocity_limits, tcp_offset };
        model.validate()?;
        Ok(model)
    }

    /// Published UR3 (CB3) DH table with +-2pi joint ranges and a straight
    /// tool of `tool_length` along the flange z axis.
    pub fn ur3(tool_length: f64) -> Self {
        use core::f64::consts::{FRAC_PI_2, PI, TAU};
        Self {
            dh: [
                DhRow::new(0.0, 0.1519, FRAC_PI_2, 0.0),
                DhRow::new(-0.24365, 0.0, 0.0, 0.0),
                DhRow::new(-0.21325, 0.0, 0.0, 0.0),
                DhRow::new(0.0, 0.11235, FRAC_PI_2, 0.0),
                DhRow::new(0.0, 0.08535, -FRAC_PI_2, 0.0),
                DhRow::new(0.0, 0.0819, 0.0, 0.0),
            ],
            joint_limits: [(-TAU, TAU); JOINT_COUNT],
            velocity_limits: [PI, PI, PI, TAU, TAU, TAU],
            tcp_offset: Vector3::new(0.0, 0.0, tool_length),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.dh.iter().enumerate() {
            let finite = [row.a, row.d, row.alpha, row.theta_offset].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidConfig(alloc::format!("dh row {i} has non-finite entries")));
            }
        }
        for (i, (lo, hi)) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(alloc::format!("joint {i}: min limit must be below max")));
            }
        }
        for (i, v) in self.velocity_limits.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(Error::InvalidConfig(alloc::format!("joint {i}: velocity limit must be positive")));
            }
        }
        if !self.tcp_offset.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("tcp offset must be finite".into()));
        }
        Ok(())
    }

    /// First joint violating `limits shrunk by margin`, with its value.
    pub fn limit_violation(&self, q: &JointVector, margin: f64) -> Option<(usize, f64)> {
        self.joint_limits
            .iter()
            .enumerate()
            .find(|(i, (lo, hi))| q[*i] < lo + margin || q[*i] > hi - margin)
            .map(|(i, _)| (i, q[i]))
    }
}

/// Position and orientation of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), rotation: Rotation3::identity() }
    }

    /// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler_zyx(position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { position, rotation: rotation_from_euler_zyx(roll, pitch, yaw) }
    }

    /// `(roll, pitch, yaw)` of the ZYX decomposition, pitch in `[-pi/2, pi/2]`.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        euler_zyx(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    pub fn inverse(&self) -> Pose {
        let rot = self.rotation.inverse();
        Pose { position: -(rot * self.position), rotation: rot }
    }

    /// Flange z axis in the base frame; the tool shaft points along it.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.matrix().column(2).into_owned()
    }

    /// Largest deviation of `RᵀR` from identity plus `|det R - 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.rotation.matrix();
        let gram = m.transpose() * m - Matrix3::identity();
        gram.abs().max() + (m.determinant() - 1.0).abs()
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            position: self.rotation * rhs.position + self.position,
            rotation: self.rotation * rhs.rotation,
        }
    }
}

pub fn rotation_from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Rotation3<f64> {
    let (sr, cr) = (libm::sin(roll), libm::cos(roll));
    let (sp, cp) = (libm::sin(pitch), libm::cos(pitch));
    let (sy, cy) = (libm::sin(yaw), libm::cos(yaw));
    #[rustfmt::skip]
    let m = Matrix3::new(
        cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
        sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
        -sp,     cp * sr,                cp * cr,
    );
    Rotation3::from_matrix_unchecked(m)
}

pub fn euler_zyx(rotation: &Rotation3<f64>) -> (f64, f64, f64) {
    let m = rotation.matrix();
    let pitch = libm::asin((-m[(2, 0)]).clamp(-1.0, 1.0));
    let roll = libm::atan2(m[(2, 1)], m[(2, 2)]);
    let yaw = libm::atan2(m[(1, 0)], m[(0, 0)]);
    (roll, pitch, yaw)
}

/// Rotation about z by `angle`.
pub fn rot_z(angle: f64) -> Rotation3<f64> {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    Rotation3::from_matrix_unchecked(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Rotation vector (axis * angle, angle in `[0, pi]`) of `rotation`, taken
/// through its unit quaternion.
pub fn rotation_log(rotation: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(rotation);
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < 1e-12 {
        // angle ~ 2n/w; first-order expansion keeps small rotations exact to O(n^3).
        return v * (2.0 / w);
    }
    v * (2.0 * libm::atan2(n, w) / n)
}

/// Linear and angular velocity of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self { linear: Vector3::zeros(), angular: Vector3::zeros() }
    }

    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

/// 6x6 map from joint velocities to the flange twist (linear rows first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian(pub Matrix6<f64>);

impl Jacobian {
    pub fn singular_values(&self) -> Vector6<f64> {
        self.0.svd(false, false).singular_values
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values().min()
    }
}

/// Flange pose for joint vector `q`.
pub fn forward_kinematics(model: &RobotModel, q: &JointVector) -> Pose {
    model
        .dh
        .iter()
        .zip(q.iter())
        .fold(Pose::identity(), |acc, (row, &theta)| acc * row.transform(theta))
}

/// Base, then the frame after each of the six links (last entry is the flange).
pub fn link_frames(model: &RobotModel, q: &JointVector) -> [Pose; JOINT_COUNT + 1] {
    let mut frames = [Pose::identity(); JOINT_COUNT + 1];
    for i in 0..JOINT_COUNT {
        frames[i + 1] = frames[i] * model.dh[i].transform(q[i]);
    }
    frames
}

/// Tool tip position (flange pose applied to the TCP offset).
pub fn tool_tip(model: &RobotModel, q: &JointVector) -> Vector3<f64> {
    forward_kinematics(model, q).transform_point(&model.tcp_offset)
}

/// Numerical flange Jacobian with the default central-difference step.
pub fn jacobian(model: &RobotModel, q: &JointVector) -> Jacobian {
    jacobian_with_step(model, q, JACOBIAN_STEP)
}

pub fn jacobian_with_step(model: &RobotModel, q: &JointVector, h: f64) -> Jacobian {
    let mut j = Matrix6::zeros();
    for k in 0..JOINT_COUNT {
        let mut plus = *q;
        let mut minus = *q;
        plus[k] += h;
        minus[k] -= h;
        let fp = forward_kinematics(model, &plus);
        let fm = forward_kinematics(model, &minus);
        let linear = (fp.position - fm.position) / (2.0 * h);
        let angular = rotation_log(&(fp.rotation * fm.rotation.inverse())) / (2.0 * h);
        j.fixed_view_mut::<3, 1>(0, k).copy_from(&linear);
        j.fixed_view_mut::<3, 1>(3, k).copy_from(&angular);
    }
    Jacobian(j)
}

/// Twist that carries `from` onto `to` in `dt` seconds.
pub fn pose_delta(from: &Pose, to: &Pose, dt: f64) -> Result<Twist> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive"));
    }
    let linear = (to.position - from.position) / dt;
    let angular = rotation_log(&(to.rotation * from.rotation.inverse())) / dt;
    Ok(Twist { linear, angular })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointVelocitySolution {
    pub qd: JointVector,
    /// Damped least squares was used instead of the exact inverse.
    pub damped: bool,
    pub sigma_min: f64,
}

/// Solves `J qd = v`, switching to damped least squares near singularities.
pub fn solve_joint_velocities(j: &Jacobian, v: &Twist) -> Result<JointVelocitySolution> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument("twist must be finite"));
    }
    if !j.0.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument("jacobian must be finite"));
    }
    let rhs = v.to_vector();
    let sigma_min = j.sigma_min();
    if sigma_min >= DAMPING_THRESHOLD {
        if let Some(qd) = j.0.lu().solve(&rhs) {
            return Ok(JointVelocitySolution { qd, damped: false, sigma_min });
        }
    }
    let jjt = j.0 * j.0.transpose() + Matrix6::identity() * (DAMPING_LAMBDA * DAMPING_LAMBDA);
    let y = jjt
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::InvalidArgument("damped system is not positive definite"))?;
    Ok(JointVelocitySolution { qd: j.0.transpose() * y, damped: true, sigma_min })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    /// Largest per-iteration joint change (rad); keeps the solver on the seed's branch.
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { max_iterations: 200, position_tolerance: 1e-10, orientation_tolerance: 1e-10, max_step: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    pub iterations: usize,
}

/// Resolved-rate IK with default options.
pub fn inverse_kinematics(model: &RobotModel, seed: &JointVector, target: &Pose) -> Result<IkSolution> {
    inverse_kinematics_with(model, seed, target, &IkOptions::default())
}

/// Iterates `q += J⁻¹ · pose_error` from `seed` until the pose error is inside
/// tolerance. Steps are capped so the result stays on the seed's branch.
pub fn inverse_kinematics_with(
    model: &RobotModel,
    seed: &JointVector,
    target: &Pose,
    opts: &IkOptions,
) -> Result<IkSolution> {
    if !seed.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("seed must be finite"));
    }
    if let Some((joint, value)) = model.limit_violation(seed, 0.0) {
        return Err(Error::JointLimit { joint, value });
    }
    let mut q = *seed;
    let mut residual = f64::INFINITY;
    for iterations in 0..=opts.max_iterations {
        let err = pose_delta(&forward_kinematics(model, &q), target, 1.0)?;
        let (lin, ang) = (err.linear.norm(), err.angular.norm());
        residual = lin + ang;
        if lin < opts.position_tolerance && ang < opts.orientation_tolerance {
            if let Some((joint, value)) = model.limit_violation(&q, 0.0) {
                return Err(Error::JointLimit { joint, value });
            }
            return Ok(IkSolution { q, iterations });
        }
        if iterations == opts.max_iterations {
            break;
        }
        let step = solve_joint_velocities(&jacobian(model, &q), &err)?.qd;
        let biggest = step.amax();
        q += if biggest > opts.max_step { step * (opts.max_step / biggest) } else { step };
    }
    Err(Error::Unreachable { iterations: opts.max_iterations, residual })
}

/// IK along a straight-line (position) and slerp (orientation) path from the
/// seed's flange pose to `target`, re-seeding each of the `steps` stages
/// with the previous solution. Reaches far targets without leaving the
/// seed's branch.
pub fn inverse_kinematics_continuation(
    model: &RobotModel,
    seed: &JointVector,
    target: &Pose,
    steps: usize,
) -> Result<IkSolution> {
    let start = forward_kinematics(model, seed);
    let (q0, qt) = (UnitQuaternion::from_rotation_matrix(&start.rotation), UnitQuaternion::from_rotation_matrix(&target.rotation));
    let steps = steps.max(1);
    let mut q = *seed;
    let mut iterations = 0;
    for k in 1..=steps {
        let s = k as f64 / steps as f64;
        let rotation = q0.try_slerp(&qt, s, 1e-12).unwrap_or(qt).to_rotation_matrix();
        let stage = Pose::new(start.position.lerp(&target.position, s), rotation);
        let sol = inverse_kinematics(model, &q, &stage)?;
        q = sol.q;
        iterations += sol.iterations;
    }
    Ok(IkSolution { q, iterations })
}

/// Sign pattern of the discriminants that select between IK branches of a
/// UR-style arm: shoulder (wrist centre ahead of or behind the base axis),
/// elbow (`sin q3`) and wrist (`sin q5`). A change of any sign means the arm
/// passed through a singularity into another configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BranchSignature {
    pub shoulder: i8,
    pub elbow: i8,
    pub wrist: i8,
}

pub fn branch_signature(model: &RobotModel, q: &JointVector) -> BranchSignature {
    let frames = link_frames(model, q);
    let wrist_centre = frames[4].position;
    let (s1, c1) = (libm::sin(q[0]), libm::cos(q[0]));
    let reach = wrist_centre.x * c1 + wrist_centre.y * s1;
    let sign = |v: f64| if v < 0.0 { -1 } else { 1 };
    BranchSignature { shoulder: sign(reach), elbow: sign(libm::sin(q[2])), wrist: sign(libm::sin(q[4])) }
}

/// Outcome of a four-point TCP calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcpCalibration {
    /// Tip offset in the flange frame, m.
    pub offset: Vector3<f64>,
    /// Estimated common tip location in the base frame.
    pub tip: Vector3<f64>,
    /// RMS distance of the four reconstructed tips from their mean.
    pub residual_rms: f64,
}

/// Four-point TCP calibration: finds the flange-frame offset `t` for which
/// `p_i + R_i t` coincides across the four poses, by least squares over the
/// six pairwise differences `(R_i - R_j) t = p_j - p_i`.
pub fn tcp_calibrate_4point(flange_poses: &[Pose; 4]) -> Result<TcpCalibration> {
    let mut a = SMatrix::<f64, 18, 3>::zeros();
    let mut b = SVector::<f64, 18>::zeros();
    let mut row = 0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            let dr = flange_poses[i].rotation.matrix() - flange_poses[j].rotation.matrix();
            let dp = flange_poses[j].position - flange_poses[i].position;
            a.fixed_view_mut::<3, 3>(row, 0).copy_from(&dr);
            b.fixed_rows_mut::<3>(row).copy_from(&dp);
            row += 3;
        }
    }
    let svd = a.svd(true, true);
    let sigma_min = svd.singular_values.min();
    if sigma_min < 1e-6 * svd.singular_values.max().max(1.0) {
        return Err(Error::DegenerateCalibration { sigma_min });
    }
    let offset = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::DegenerateCalibration { sigma_min })?
        .into_owned();
    let tips: [Vector3<f64>; 4] = core::array::from_fn(|i| flange_poses[i].transform_point(&offset));
    let tip = tips.iter().fold(Vector3::zeros(), |acc, t| acc + t) / 4.0;
    let residual_rms = libm::sqrt(tips.iter().map(|t| (t - tip).norm_squared()).sum::<f64>() / 4.0);
    Ok(TcpCalibration { offset, tip, residual_rms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI, TAU};

    fn sample_q() -> JointVector {
        JointVector::new(0.3, -1.2, 1.4, -1.6, -1.5, 0.4)
    }

    /// Naive product of textbook DH matrices built as four separate 4x4 factors.
    fn naive_fk(model: &RobotModel, q: &JointVector) -> nalgebra::Matrix4<f64> {
        let mut t = nalgebra::Matrix4::identity();
        for (row, &theta) in model.dh.iter().zip(q.iter()) {
            let th = theta + row.theta_offset;
            let rz = nalgebra::Matrix4::new(
                libm::cos(th), -libm::sin(th), 0.0, 0.0,
                libm::sin(th), libm::cos(th), 0.0, 0.0,
                0.0, 0.0, 1.0, 0.0,
                0.0, 0.0, 0.0, 1.0,
            );
            let tz = nalgebra::Matrix4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, row.d, 0.0, 0.0, 0.0, 1.0);
            let tx = nalgebra::Matrix4::new(1.0, 0.0, 0.0, row.a, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
            let rx = nalgebra::Matrix4::new(
                1.0, 0.0, 0.0, 0.0,
                0.0, libm::cos(row.alpha), -libm::sin(row.alpha), 0.0,
                0.0, libm::sin(row.alpha), libm::cos(row.alpha), 0.0,
                0.0, 0.0, 0.0, 1.0,
            );
            t = t * rz * tz * tx * rx;
        }
        t
    }

    fn assert_pose_matches(p: &Pose, m: &nalgebra::Matrix4<f64>) {
        for r in 0..3 {
            assert!((p.position[r] - m[(r, 3)]).abs() < 1e-12);
            for c in 0..3 {
                assert!((p.rotation.matrix()[(r, c)] - m[(r, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fk_matches_naive_dh_product() {
        let model = RobotModel::ur3(0.3);
        assert_pose_matches(&forward_kinematics(&model, &JointVector::zeros()), &naive_fk(&model, &JointVector::zeros()));
        assert_pose_matches(&forward_kinematics(&model, &sample_q()), &naive_fk(&model, &sample_q()));
    }

    #[test]
    fn ur3_zero_pose_is_stretched_along_minus_x() {
        // a2 + a3 along -x, d4 + d6 along -y (flange z flips), d1 - d5 height.
        let model = RobotModel::ur3(0.3);
        let p = forward_kinematics(&model, &JointVector::zeros()).position;
        assert!((p.x - (-0.4569)).abs() < 1e-12);
        assert!((p.y - (-(0.11235 + 0.0819))).abs() < 1e-12);
        assert!((p.z - (0.1519 - 0.08535)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_chain_stays_at_origin() {
        let mut model = RobotModel::ur3(0.0);
        for row in model.dh.iter_mut() {
            row.a = 0.0;
            row.d = 0.0;
        }
        let pose = forward_kinematics(&model, &sample_q());
        assert!(pose.position.norm() < 1e-15);
        let j = jacobian(&model, &sample_q());
        assert!(j.0.fixed_rows::<3>(0).amax() < 1e-12);
    }

    #[test]
    fn fk_is_periodic_in_joint_one() {
        let model = RobotModel::ur3(0.3);
        let q = sample_q();
        let mut shifted = q;
        shifted[0] += TAU;
        let a = forward_kinematics(&model, &q);
        let b = forward_kinematics(&model, &shifted);
        assert!((a.position - b.position).norm() < 1e-12);
        assert!((a.rotation.matrix() - b.rotation.matrix()).amax() < 1e-12);
    }

    #[test]
    fn euler_convention_is_rz_ry_rx() {
        let (roll, pitch, yaw) = (0.3, -0.4, 1.1);
        let r = rotation_from_euler_zyx(roll, pitch, yaw);
        let expect = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), pitch)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
        assert!((r.matrix() - expect.matrix()).amax() < 1e-15);
        let (r2, p2, y2) = euler_zyx(&r);
        assert!((r2 - roll).abs() < 1e-12 && (p2 - pitch).abs() < 1e-12 && (y2 - yaw).abs() < 1e-12);
    }

    #[test]
    fn pose_delta_cases() {
        let a = Pose::identity();
        assert_eq!(pose_delta(&a, &a, 1.0).unwrap(), Twist::zero());

        let b = Pose::new(Vector3::new(0.001, 0.0, 0.0), Rotation3::identity());
        let t = pose_delta(&a, &b, 1.0).unwrap();
        assert!((t.linear - Vector3::new(0.001, 0.0, 0.0)).norm() < 1e-18);
        assert_eq!(t.angular, Vector3::zeros());

        let c = Pose::new(Vector3::zeros(), rot_z(FRAC_PI_2));
        let t = pose_delta(&a, &c, 1.0).unwrap();
        assert!((t.angular - Vector3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-9);

        assert_eq!(pose_delta(&a, &b, 0.0), Err(Error::InvalidArgument("dt must be positive")));
        assert!(pose_delta(&a, &b, -1.0).is_err());
    }

    #[test]
    fn rotation_log_matches_axis_angle() {
        // Oracle: quaternion log computed by hand from the half-angle form.
        for &(angle, axis) in &[(0.0, [0.0, 0.0, 1.0]), (1e-9, [1.0, 0.0, 0.0]), (2.5, [0.2, -0.5, 0.8]), (PI - 1e-6, [0.0, 1.0, 0.0])] {
            let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
            let r = Rotation3::from_axis_angle(&axis, angle);
            let v = rotation_log(&r);
            assert!((v - axis.into_inner() * angle).norm() < 1e-9, "angle {angle}");
        }
    }

    #[test]
    fn velocity_solve_cases() {
        let ident = Jacobian(Matrix6::identity());
        let sol = solve_joint_velocities(&ident, &Twist::zero()).unwrap();
        assert_eq!(sol.qd, JointVector::zeros());
        assert!(!sol.damped);

        let v = Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let sol = solve_joint_velocities(&ident, &v).unwrap();
        assert_eq!(sol.qd, JointVector::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));

        let bad = Twist::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        assert!(matches!(solve_joint_velocities(&ident, &bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn near_singular_solve_is_damped_and_bounded() {
        let mut m = Matrix6::identity();
        m[(5, 5)] = 1e-7;
        let v = Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0));
        let sol = solve_joint_velocities(&Jacobian(m), &v).unwrap();
        assert!(sol.damped);
        // sigma / (sigma^2 + lambda^2) bounds the damped gain.
        assert!(sol.qd.amax() <= 1e-7 / (1e-14 + DAMPING_LAMBDA * DAMPING_LAMBDA) + 1e-12);
    }

    #[test]
    fn ik_returns_seed_for_its_own_pose() {
        let model = RobotModel::ur3(0.3);
        let q = sample_q();
        let sol = inverse_kinematics(&model, &q, &forward_kinematics(&model, &q)).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.q, q);
    }

    #[test]
    fn ik_recovers_perturbed_target() {
        let model = RobotModel::ur3(0.3);
        let q = sample_q();
        let mut moved = q;
        moved += JointVector::new(0.02, -0.03, 0.01, 0.04, -0.02, 0.05);
        let target = forward_kinematics(&model, &moved);
        let sol = inverse_kinematics(&model, &q, &target).unwrap();
        let got = forward_kinematics(&model, &sol.q);
        assert!((got.position - target.position).norm() < 1e-6);
        assert_eq!(branch_signature(&model, &sol.q), branch_signature(&model, &q));
    }

    #[test]
    fn ik_rejects_far_targets_and_bad_seeds() {
        let model = RobotModel::ur3(0.3);
        let target = Pose::new(Vector3::new(10.0, 0.0, 0.0), Rotation3::identity());
        assert!(matches!(inverse_kinematics(&model, &sample_q(), &target), Err(Error::Unreachable { .. })));

        let mut seed = sample_q();
        seed[1] = 7.0;
        assert!(matches!(
            inverse_kinematics(&model, &seed, &Pose::identity()),
            Err(Error::JointLimit { joint: 1, .. })
        ));
    }

    #[test]
    fn tcp_calibration_rejects_identical_poses() {
        let p = Pose::from_euler_zyx(Vector3::new(0.2, 0.1, 0.3), 0.1, 0.2, 0.3);
        assert!(matches!(tcp_calibrate_4point(&[p; 4]), Err(Error::DegenerateCalibration { .. })));
    }

    #[test]
    fn tcp_calibration_zero_offset() {
        let tip = Vector3::new(0.3, -0.1, 0.2);
        let poses = [(0.0, 0.0, 0.0), (0.5, 0.0, 0.2), (0.0, 0.6, -0.3), (-0.4, -0.3, 1.0)]
            .map(|(r, p, y)| Pose::from_euler_zyx(tip, r, p, y));
        let cal = tcp_calibrate_4point(&poses).unwrap();
        assert!(cal.offset.norm() < 1e-9);
        assert!((cal.tip - tip).norm() < 1e-9);
    }

    #[test]
    fn model_validation() {
        let mut m = RobotModel::ur3(0.3);
        m.joint_limits[2] = (1.0, 1.0);
        assert!(m.validate().is_err());
        let mut m = RobotModel::ur3(0.3);
        m.velocity_limits[0] = 0.0;
        assert!(m.validate().is_err());
        assert!(RobotModel::ur3(0.3).validate().is_ok());
    }
}
