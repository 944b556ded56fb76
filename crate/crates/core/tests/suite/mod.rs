//! Randomised checks of the core invariants against independent oracles.
//!
//! Shared by this crate's test target and the workspace acceptance runner,
//! so every check is a plain function that panics on failure.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix4, Rotation3, Unit, Vector3};
use proptest::prelude::*;

use rcmtwin_core::bench::{report_from_errors, ConeParams, TrajectoryParams};
use rcmtwin_core::kinematics::*;
use rcmtwin_core::rcm::*;
use rcmtwin_core::safety::{check, CheckInput, SafetyEventKind, SafetyLimits};
use rcmtwin_core::servo_sim::{servo_step, RobotState, ServoConfig, World, WorldConfig};
use rcmtwin_core::teleop::*;
use rcmtwin_core::Side;

const L: f64 = 0.30;

fn frame() -> FulcrumFrame {
    FulcrumFrame::aligned(Vector3::new(0.40, 0.0, 0.15), 65f64.to_radians(), PI, 0.22, L)
}

fn home() -> (RobotModel, JointVector, FulcrumFrame) {
    let w = World::new(WorldConfig::trainer_default()).unwrap();
    let arm = w.arm(Side::Left);
    (w.config.model.clone(), arm.robot.q, arm.frame)
}

/// Textbook chain of 4x4 DH matrices, frames 0..=6.
fn dh_frames(model: &RobotModel, q: &JointVector) -> Vec<Matrix4<f64>> {
    let mut t = Matrix4::identity();
    let mut frames = vec![t];
    for (row, &theta) in model.dh.iter().zip(q.iter()) {
        let th = theta + row.theta_offset;
        let rz = Matrix4::new(th.cos(), -th.sin(), 0.0, 0.0, th.sin(), th.cos(), 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let tz = Matrix4::new_translation(&Vector3::new(0.0, 0.0, row.d));
        let tx = Matrix4::new_translation(&Vector3::new(row.a, 0.0, 0.0));
        let (sa, ca) = row.alpha.sin_cos();
        let rx = Matrix4::new(1.0, 0.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, 0.0, sa, ca, 0.0, 0.0, 0.0, 0.0, 1.0);
        t = t * rz * tz * tx * rx;
        frames.push(t);
    }
    frames
}

/// Geometric Jacobian `[z_i x (p - o_i); z_i]` from the textbook chain.
fn geometric_jacobian(model: &RobotModel, q: &JointVector) -> nalgebra::Matrix6<f64> {
    let frames = dh_frames(model, q);
    let p = frames[6].fixed_view::<3, 1>(0, 3).into_owned();
    let mut j = nalgebra::Matrix6::zeros();
    for i in 0..6 {
        let z = frames[i].fixed_view::<3, 1>(0, 2).into_owned();
        let o = frames[i].fixed_view::<3, 1>(0, 3).into_owned();
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&z.cross(&(p - o)));
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    j
}

fn joint_vector(range: f64) -> impl Strategy<Value = JointVector> {
    proptest::array::uniform6(-range..range).prop_map(|a| JointVector::from_row_slice(&a))
}

fn spherical_state() -> impl Strategy<Value = SphericalState> {
    let lim = 80f64.to_radians();
    (-lim..lim, -PI..PI, 0.02..0.29).prop_map(|(t, p, r)| SphericalState::new(t, p, r))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(1000) })]

    fn spherical_position_round_trip(s in spherical_state()) {
        let f = frame();
        let p = flange_position(&f, &s);
        let back = spherical_from_position(&f, &p).unwrap();
        prop_assert!((flange_position(&f, &back) - p).norm() <= 1e-9);
        prop_assert!((back.theta - s.theta).abs() < 1e-9 && (back.r - s.r).abs() < 1e-9);
        let tip = tip_position(&f, &s).unwrap();
        prop_assert!((tip_position(&f, &spherical_for_tip(&f, &tip).unwrap()).unwrap() - tip).norm() <= 1e-9);
    }

    fn dead_zone_is_one_lipschitz_and_zero_inside(
        a in proptest::array::uniform3(-0.01..0.01f64),
        b in proptest::array::uniform3(-0.01..0.01f64),
        thr in 0.0005..0.005f64,
    ) {
        let cfg = DeadZoneConfig { linear_threshold: thr, angular_threshold: 2f64.to_radians() };
        let sample = |p: [f64; 3]| StylusSample { position: Vector3::from(p), orientation: [0.0; 3], button1: false, button2: false, timestamp: 0.0 };
        let reference = sample([0.0; 3]);
        let (da, active_a) = dead_zone_filter(&reference, &sample(a), &cfg);
        let (db, _) = dead_zone_filter(&reference, &sample(b), &cfg);
        prop_assert!((da.position - db.position).norm() <= (Vector3::from(a) - Vector3::from(b)).norm() + 1e-15);
        if Vector3::from(a).norm() < thr {
            prop_assert!(!active_a);
            prop_assert_eq!(da, StylusDelta::zero());
        } else {
            // Shell subtraction: the output magnitude is the excess over the threshold.
            prop_assert!((da.position.norm() - (Vector3::from(a).norm() - thr)).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(100) })]

    fn aligned_orientation_identities(theta0 in -1.3..1.3f64, phi0 in -PI..PI) {
        let f = FulcrumFrame::aligned(Vector3::new(0.4, 0.0, 0.15), theta0, phi0, 0.2, L);
        let s = f.initial_state();
        let (roll, pitch, yaw) = flange_orientation(&f, &s);
        prop_assert_eq!((roll, pitch, yaw), (f.roll0, f.pitch0, f.yaw0));
        prop_assert!(pitch.abs() < 1e-12);
        // Reconstructed by hand: Rz(phi - pi/2) * Rx(theta + pi/2).
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), phi0 - FRAC_PI_2) * Rotation3::from_axis_angle(&Vector3::x_axis(), theta0 + FRAC_PI_2);
        let pose = flange_pose(&f, &s);
        prop_assert!((pose.rotation.matrix() - r.matrix()).amax() < 1e-12);
        let u = Vector3::new(theta0.cos() * phi0.cos(), theta0.cos() * phi0.sin(), theta0.sin());
        prop_assert!((pose.z_axis() + u).norm() < 1e-12);
        prop_assert!(rcm_error(&f, &pose) < 1e-12);
    }

    fn jacobian_matches_finer_differences_and_geometry(q in joint_vector(PI)) {
        let model = RobotModel::ur3(L);
        let j = jacobian(&model, &q).0;
        let fine = jacobian_with_step(&model, &q, 1e-7).0;
        let scale = fine.amax();
        prop_assert!((j - fine).amax() / scale <= 1e-6);
        let g = geometric_jacobian(&model, &q);
        prop_assert!((j - g).amax() / g.amax() <= 1e-6);
    }

    fn ik_round_trip(q in joint_vector(PI), noise in proptest::array::uniform6(-0.05..0.05f64)) {
        let model = RobotModel::ur3(L);
        prop_assume!(jacobian(&model, &q).sigma_min() > 0.01);
        let target = forward_kinematics(&model, &q);
        let seed = q + JointVector::from_row_slice(&noise);
        let sol = inverse_kinematics(&model, &seed, &target).unwrap();
        let reached = forward_kinematics(&model, &sol.q);
        prop_assert!((reached.position - target.position).norm() <= 1e-6);
        prop_assert!(rotation_log(&(reached.rotation * target.rotation.inverse())).norm() <= 1e-6);
    }

    fn velocity_solve_residual(q in joint_vector(PI), v in proptest::array::uniform6(-0.1..0.1f64)) {
        let model = RobotModel::ur3(L);
        let j = jacobian(&model, &q);
        prop_assume!(j.sigma_min() > 1e-3);
        let twist = Twist::from_vector(&nalgebra::Vector6::from_row_slice(&v));
        let sol = solve_joint_velocities(&j, &twist).unwrap();
        prop_assert!(!sol.damped);
        prop_assert!((j.0 * sol.qd - twist.to_vector()).amax() <= 1e-10);
    }

    fn tcp_four_point_recovery(
        tip in proptest::array::uniform3(-0.5..0.5f64),
        offset in proptest::array::uniform3(-0.3..0.3f64),
        angles in proptest::array::uniform4(0.4..1.2f64),
        yaw in -PI..PI,
    ) {
        let tip = Vector3::from(tip);
        let offset = Vector3::from(offset);
        let axes = [Vector3::x(), Vector3::y(), Vector3::new(1.0, 1.0, 0.0), Vector3::new(0.0, 1.0, 1.0)];
        let base = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let poses: [Pose; 4] = std::array::from_fn(|i| {
            let r = base * Rotation3::from_axis_angle(&Unit::new_normalize(axes[i]), angles[i]);
            Pose::new(tip - r * offset, r)
        });
        let cal = tcp_calibrate_4point(&poses).unwrap();
        prop_assert!((cal.offset - offset).norm() <= 1e-9);
        prop_assert!((cal.tip - tip).norm() <= 1e-9);
    }

    fn servo_decays_first_order(frac in proptest::array::uniform6(-1.0..1.0f64), lookahead in 0.03..0.2f64) {
        let cfg = ServoConfig::new(125.0, lookahead);
        // Largest step that stays below the velocity clamp.
        let unclamped = cfg.max_joint_vel / cfg.gain;
        let target = JointVector::from_row_slice(&frac) * unclamped;
        let mut s = RobotState::at_rest(JointVector::zeros());
        let e0 = target.amax();
        for k in 1..=200 {
            s = servo_step(&s, &target, &cfg);
            let bound = e0 * (-(k as f64) * cfg.dt() / lookahead).exp() + 1e-12;
            prop_assert!((target - s.q).amax() <= bound, "tick {}", k);
            prop_assert!(s.qd.amax() <= cfg.max_joint_vel);
        }
    }

    fn safety_is_deterministic_and_tightening_never_drops_events(
        dq in proptest::array::uniform6(-0.08..0.08f64),
        hole_shift in proptest::array::uniform3(-0.001..0.001f64),
        tighten in 0.2..1.0f64,
        base_rcm in 1e-5..1e-3f64,
        base_sigma in 1e-3..0.08f64,
        base_margin in 0.0..0.2f64,
        base_reach in 0.4..0.6f64,
    ) {
        let (model, q, frame) = home();
        let next = q + JointVector::from_row_slice(&dq);
        let flange = forward_kinematics(&model, &next);
        let frame = FulcrumFrame { hole: frame.hole + Vector3::from(hole_shift), ..frame };
        let input = CheckInput { model: &model, prev_q: &q, next_q: &next, flange: &flange, frame: &frame, dt: 0.008, arm: Side::Left, tick: 3, scene: None };
        let loose = SafetyLimits { rcm_error_max: base_rcm, singularity_sigma_min: base_sigma, joint_margin: 0.01, speed_margin: base_margin.max(1e-3), reach_max: base_reach };
        let a = check(&input, &loose).unwrap();
        prop_assert_eq!(&a, &check(&input, &loose).unwrap());
        let tight = SafetyLimits {
            rcm_error_max: loose.rcm_error_max * tighten,
            singularity_sigma_min: loose.singularity_sigma_min / tighten,
            joint_margin: loose.joint_margin / tighten,
            speed_margin: 1.0 - (1.0 - loose.speed_margin) * tighten,
            reach_max: loose.reach_max * tighten,
        };
        let b: Vec<SafetyEventKind> = check(&input, &tight).unwrap().iter().map(|e| e.kind).collect();
        for e in &a {
            prop_assert!(b.contains(&e.kind), "{:?} dropped", e.kind);
        }
    }

    fn continuation_ik_keeps_branch(steps in proptest::collection::vec(proptest::array::uniform3(-1.0..1.0f64), 100)) {
        let (model, q0, f) = home();
        let sig = branch_signature(&model, &q0);
        let mut s = f.initial_state();
        let mut q = q0;
        for d in steps {
            s.theta = (s.theta + d[0] * 0.01).clamp(f.theta0 - 0.3, f.theta0 + 0.3);
            s.phi = (s.phi + d[1] * 0.01).clamp(f.phi0 - 0.5, f.phi0 + 0.5);
            s.r = (s.r + d[2] * 0.002).clamp(0.19, 0.25);
            q = inverse_kinematics(&model, &q, &flange_pose(&f, &s)).unwrap().q;
            prop_assert_eq!(branch_signature(&model, &q), sig);
        }
    }

    fn report_metrics_are_order_free_and_homogeneous(errs in proptest::collection::vec((0.0..1e-3f64, 0.0..1e-5f64), 1..50), k in 0.5..4.0f64) {
        let (t, r): (Vec<f64>, Vec<f64>) = errs.iter().copied().unzip();
        let rep = report_from_errors(&t, &r).unwrap();
        prop_assert!(rep.tracking_rmse <= rep.tracking_max * (1.0 + 1e-12) && rep.tracking_rmse >= 0.0);
        prop_assert!(rep.rcm_rmse <= rep.rcm_max * (1.0 + 1e-12) && rep.rcm_rmse >= 0.0);

        let (mut tr, mut rr) = (t.clone(), r.clone());
        tr.reverse();
        rr.reverse();
        let rev = report_from_errors(&tr, &rr).unwrap();
        prop_assert_eq!(rev.tracking_max, rep.tracking_max);
        prop_assert!((rev.tracking_rmse - rep.tracking_rmse).abs() <= 1e-12 * rep.tracking_rmse.max(1e-30));

        // Doubling is exact in binary floating point; other factors to rounding.
        let doubled: Vec<f64> = t.iter().map(|v| v * 2.0).collect();
        let d = report_from_errors(&doubled, &r).unwrap();
        prop_assert_eq!(d.tracking_max, 2.0 * rep.tracking_max);
        prop_assert_eq!(d.tracking_rmse, 2.0 * rep.tracking_rmse);
        let scaled: Vec<f64> = t.iter().map(|v| v * k).collect();
        let s = report_from_errors(&scaled, &r).unwrap();
        prop_assert!((s.tracking_rmse - k * rep.tracking_rmse).abs() <= 1e-12 * k * rep.tracking_rmse.max(1e-30));
    }

    fn higher_speed_level_never_moves_less(level in 0u8..6, action_idx in 0usize..10) {
        let f = frame();
        let s = f.initial_state();
        let action = Action::MOTIONS[action_idx];
        let intent = TeleopIntent { side: Side::Left, action };
        let mag = |c: RcmCommand| (c.d_theta.powi(2) + c.d_phi.powi(2) + c.d_r.powi(2) + c.d_spin.powi(2) + c.d_grasp.powi(2)).sqrt();
        let lo = intent_to_command(&intent, &SpeedScale::new(level), 0.008, &BaseRates::default(), &f, &s).unwrap();
        let hi = intent_to_command(&intent, &SpeedScale::new(level + 1), 0.008, &BaseRates::default(), &f, &s).unwrap();
        prop_assert!(mag(hi) >= mag(lo));
    }
}

fn key_table_is_a_bijection_onto_side_action_pairs() {
    let mut seen = std::collections::HashSet::new();
    for (key, side, action) in KEY_TABLE {
        let intent = map_key(key).unwrap();
        assert_eq!((intent.side, intent.action), (side, action));
        assert!(seen.insert((side, action)), "{key} duplicates {side:?} {action:?}");
    }
    let actions = Action::MOTIONS.iter().copied().chain([Action::SpeedUp, Action::SpeedDown]);
    let expected: std::collections::HashSet<_> = actions.flat_map(|a| Side::BOTH.map(|s| (s, a))).collect();
    assert_eq!(seen, expected);
    assert_eq!(seen.len(), 24);
    let keys: std::collections::HashSet<_> = KEY_TABLE.iter().map(|(k, _, _)| *k).collect();
    assert_eq!(keys.len(), 24);
    for c in 'A'..='Z' {
        let mapped = KEY_TABLE.iter().any(|(k, _, _)| *k == Key::Char(c));
        assert_eq!(map_key(Key::Char(c)).is_some(), mapped);
    }
}

fn free_state_emits_nothing() {
    let f = frame();
    let s = f.initial_state();
    let mut arm = ArmInput::new(Side::Left);
    let cfg = TeleopConfig::default();
    for k in 0..50 {
        let wobble = 0.01 * (k as f64).sin();
        arm.stylus(StylusSample { position: Vector3::new(wobble, 0.02, 0.0), orientation: [wobble; 3], button1: true, button2: true, timestamp: k as f64 });
        assert_eq!(arm.command(0.008, &cfg, &f, &s).unwrap(), RcmCommand::zero());
    }
}

fn stylus_inside_dead_zone_emits_nothing() {
    let f = frame();
    let s = f.initial_state();
    let cfg = TeleopConfig::default();
    let mut arm = ArmInput::new(Side::Right);
    for k in 0..200 {
        let t = k as f64 * 0.1;
        let p = Vector3::new(t.sin(), t.cos(), (2.0 * t).sin()) * 0.0006;
        arm.stylus(StylusSample { position: p, orientation: [0.02 * t.sin(), 0.0, 0.0], button1: false, button2: false, timestamp: t });
        assert!(arm.command(0.008, &cfg, &f, &s).unwrap().is_zero(), "sample {k}");
    }
}

fn identical_command_streams_give_identical_traces() {
    let run = || {
        let mut w = World::new(WorldConfig::trainer_default()).unwrap();
        let mut snapshots = Vec::new();
        for k in 0..300 {
            let d = if k % 100 < 50 { 1e-4 } else { -1e-4 };
            let cmd = RcmCommand { d_theta: d, d_phi: 0.5 * d, d_r: -0.1 * d, d_spin: d, d_grasp: 0.0 };
            w.tick(&[cmd, RcmCommand { d_phi: -d, ..RcmCommand::zero() }]);
            snapshots.push((w.arm(Side::Left).robot, w.arm(Side::Right).robot, w.arm(Side::Left).rcm_error));
        }
        snapshots
    };
    assert_eq!(run(), run());
}

fn joint_speed_never_exceeds_the_clamp() {
    let mut w = World::new(WorldConfig::trainer_default()).unwrap();
    let max = w.config.servo.max_joint_vel;
    for k in 0..400 {
        let d = 2e-4 * ((k / 40) as f64 - 4.5).signum();
        w.tick(&[RcmCommand { d_theta: d, d_phi: d, ..RcmCommand::zero() }; 2]);
        for side in Side::BOTH {
            assert!(w.arm(side).robot.qd.amax() <= max);
        }
    }
}

fn generated_trajectories_are_deterministic() {
    let f = frame();
    let lim = RcmLimits::for_tool(L);
    let p = TrajectoryParams::Cone(ConeParams::default());
    assert_eq!(rcmtwin_core::bench::generate(&p, &f, &lim).unwrap(), rcmtwin_core::bench::generate(&p, &f, &lim).unwrap());
}

fn cone_samples_are_realisable_through_the_hole() {
    let f = frame();
    let traj = rcmtwin_core::bench::gen_truncated_cone(&ConeParams::default(), &f, &RcmLimits::for_tool(L)).unwrap();
    for tip in &traj.samples {
        let s = spherical_for_tip(&f, tip).unwrap();
        // Flange, hole and tip are collinear and the shaft has the tool length.
        let flange = flange_position(&f, &s);
        let along = (tip - flange).normalize();
        let to_hole = f.hole - flange;
        assert!((to_hole - along * to_hole.dot(&along)).norm() < 1e-12);
        assert!(((tip - flange).norm() - L).abs() < 1e-12);
    }
}

/// Every check above: function name, description, check.
#[allow(dead_code)]
pub const SUITE: &[(&str, &str, fn())] = &[
    ("spherical_position_round_trip", "spherical forward/inverse round trip (1000 states)", spherical_position_round_trip),
    ("dead_zone_is_one_lipschitz_and_zero_inside", "dead zone zero inside, continuous at the shell (1000 cases)", dead_zone_is_one_lipschitz_and_zero_inside),
    ("aligned_orientation_identities", "aligned orientation identities", aligned_orientation_identities),
    ("jacobian_matches_finer_differences_and_geometry", "jacobian vs finer differences and geometric oracle (100 configurations)", jacobian_matches_finer_differences_and_geometry),
    ("ik_round_trip", "FK/IK round trip (100 configurations)", ik_round_trip),
    ("velocity_solve_residual", "joint velocity residual", velocity_solve_residual),
    ("tcp_four_point_recovery", "TCP 4-point recovery (100 trials)", tcp_four_point_recovery),
    ("servo_decays_first_order", "servo first-order decay bound", servo_decays_first_order),
    ("safety_is_deterministic_and_tightening_never_drops_events", "safety determinism and monotone severity", safety_is_deterministic_and_tightening_never_drops_events),
    ("continuation_ik_keeps_branch", "IK continuation keeps the branch", continuation_ik_keeps_branch),
    ("report_metrics_are_order_free_and_homogeneous", "report metrics order-free and homogeneous", report_metrics_are_order_free_and_homogeneous),
    ("higher_speed_level_never_moves_less", "speed levels are monotone", higher_speed_level_never_moves_less),
    ("key_table_is_a_bijection_onto_side_action_pairs", "key table bijection over 24 keys", key_table_is_a_bijection_onto_side_action_pairs),
    ("free_state_emits_nothing", "free state emits nothing", free_state_emits_nothing),
    ("stylus_inside_dead_zone_emits_nothing", "stylus inside dead zone emits nothing", stylus_inside_dead_zone_emits_nothing),
    ("identical_command_streams_give_identical_traces", "identical command streams give identical traces", identical_command_streams_give_identical_traces),
    ("joint_speed_never_exceeds_the_clamp", "joint speed clamp", joint_speed_never_exceeds_the_clamp),
    ("generated_trajectories_are_deterministic", "trajectory generation deterministic", generated_trajectories_are_deterministic),
    ("cone_samples_are_realisable_through_the_hole", "cone samples realisable through the hole", cone_samples_are_realisable_through_the_hole),
];
