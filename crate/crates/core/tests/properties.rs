//! Property and invariant checks of the core crate.

mod suite;

fn run(name: &str) {
    let (_, _, check) = suite::SUITE.iter().find(|e| e.0 == name).expect("registered check");
    check()
}

macro_rules! checks {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                run(stringify!($name))
            }
        )*

        #[test]
        fn every_registered_check_runs_here() {
            let here = [$(stringify!($name)),*];
            for (name, _, _) in suite::SUITE {
                assert!(here.contains(name), "{name} has no test");
            }
        }
    };
}

checks!(
    spherical_position_round_trip,
    dead_zone_is_one_lipschitz_and_zero_inside,
    aligned_orientation_identities,
    jacobian_matches_finer_differences_and_geometry,
    ik_round_trip,
    velocity_solve_residual,
    tcp_four_point_recovery,
    servo_decays_first_order,
    safety_is_deterministic_and_tightening_never_drops_events,
    continuation_ik_keeps_branch,
    report_metrics_are_order_free_and_homogeneous,
    higher_speed_level_never_moves_less,
    key_table_is_a_bijection_onto_side_action_pairs,
    free_state_emits_nothing,
    stylus_inside_dead_zone_emits_nothing,
    identical_command_streams_give_identical_traces,
    joint_speed_never_exceeds_the_clamp,
    generated_trajectories_are_deterministic,
    cone_samples_are_realisable_through_the_hole,
);
