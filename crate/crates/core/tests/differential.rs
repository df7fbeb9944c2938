use exo_core::differential::{
    actuator_from_torques, assemble_jacobian, assemble_jacobian_with_limit, grasp_report_for, grasp_stability_report, pose_grid,
    torques_from_actuator, JointTorques,
};
use exo_core::geometry::{FingerPose, MeasuredState, MechanismGeometry, MechanismState};
use exo_core::kinematics::{closed_form, solve_ik, SolveOptions, Solver};
use nalgebra::Matrix2;
use proptest::prelude::*;

fn state(q1: f64, q2: f64) -> MechanismState {
    solve_ik(&MechanismGeometry::index(), &FingerPose::from_deg(q1, q2), &SolveOptions::default()).unwrap().state
}

/// Central differences of the closed-form forward map, an independent
/// route to J_A.
fn numeric_j_a(meas: &MeasuredState) -> Matrix2<f64> {
    let g = MechanismGeometry::index();
    let h = 1e-6;
    let f = |l_x: f64, q_b: f64| closed_form(&g, &MeasuredState { l_x, q_b }).unwrap().pose.vector();
    let c0 = (f(meas.l_x + h, meas.q_b) - f(meas.l_x - h, meas.q_b)) / (2.0 * h);
    let c1 = (f(meas.l_x, meas.q_b + h) - f(meas.l_x, meas.q_b - h)) / (2.0 * h);
    Matrix2::from_columns(&[c0, c1])
}

#[test]
fn zero_actuator_force_gives_zero_torque() {
    let jac = assemble_jacobian(&MechanismGeometry::index(), &state(30.0, 30.0)).unwrap();
    let t = torques_from_actuator(&jac, 0.0).unwrap();
    assert_eq!((t.tau_1, t.tau_2), (0.0, 0.0));
    let w = actuator_from_torques(&jac, &JointTorques::new(0.0, 0.0));
    assert_eq!((w.f_a, w.tau_b), (0.0, 0.0));
}

#[test]
fn transmission_round_trips() {
    let jac = assemble_jacobian(&MechanismGeometry::index(), &state(50.0, 20.0)).unwrap();
    let w = actuator_from_torques(&jac, &torques_from_actuator(&jac, 3.0).unwrap());
    assert!((w.f_a - 3.0).abs() < 1e-9 && w.tau_b.abs() < 1e-9, "{w:?}");
}

#[test]
fn unit_force_keeps_ratio_and_sign_on_a_coarse_grid() {
    let solver = Solver::new(MechanismGeometry::index(), SolveOptions::default()).unwrap();
    let r = grasp_stability_report(&solver, &pose_grid(80.0, 90.0, 5.0));
    assert_eq!(r.rows.len(), 17 * 19);
    assert_eq!(r.stable_fraction, 1.0);
    for row in &r.rows {
        assert!(row.error.is_none());
        assert!((0.25..=7.5).contains(&row.ratio), "{row:?}");
    }
}

#[test]
fn broken_geometry_yields_a_report_not_a_panic() {
    let mut g = MechanismGeometry::index();
    g.l_ej = 5.0;
    let r = grasp_report_for(&g, &pose_grid(80.0, 90.0, 10.0), &SolveOptions::unbounded());
    assert_eq!(r.rows.len(), 9 * 10);
    assert!(r.stable_fraction < 1.0);
    assert!(r.rows.iter().any(|row| row.error.is_some() || !row.same_sign));
}

#[test]
fn empty_grid_gives_an_empty_table() {
    let solver = Solver::new(MechanismGeometry::index(), SolveOptions::default()).unwrap();
    assert!(pose_grid(80.0, 90.0, 0.0).is_empty());
    let r = grasp_stability_report(&solver, &[]);
    assert!(r.rows.is_empty());
}

#[test]
fn ill_conditioned_constraint_block_is_refused() {
    let e = assemble_jacobian_with_limit(&MechanismGeometry::index(), &state(30.0, 30.0), 1.0).unwrap_err();
    assert_eq!(e.code(), "SingularConstraintBlock");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn jacobian_matches_central_differences(q1 in 0.0f64..80.0, q2 in 0.0f64..90.0) {
        let s = state(q1, q2);
        let jac = assemble_jacobian(&MechanismGeometry::index(), &s).unwrap();
        let fd = numeric_j_a(&s.meas);
        let rel = (jac.j_a - fd).amax() / fd.amax();
        prop_assert!(rel < 1e-4, "rel {rel}");
    }

    #[test]
    fn force_and_velocity_maps_are_dual(q1 in 0.0f64..80.0, q2 in 0.0f64..90.0, f_a in -20.0f64..20.0) {
        let jac = assemble_jacobian(&MechanismGeometry::index(), &state(q1, q2)).unwrap();
        let inv_t = jac.j_a.transpose().try_inverse().unwrap();
        prop_assert!((inv_t * jac.j_a.transpose() - Matrix2::identity()).amax() < 1e-10);
        let t = torques_from_actuator(&jac, f_a).unwrap();
        prop_assert!(jac.j_passive.dot(&t.vector()).abs() <= 1e-10 * t.vector().norm().max(1e-300));
    }
}
