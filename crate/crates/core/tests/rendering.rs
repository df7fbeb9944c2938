use exo_core::differential::JointTorques;
use exo_core::geometry::FingerPose;
use exo_core::rendering::{
    actuator_level_force, behavior_alignment, clamp_desired, clamp_desired_pose, displayed_impedance,
    estimate_joint_stiffness, finger_impedance, joint_level_torques, nonactuated_projector, passive_column_for_slope,
    project_pose_raw, project_torques_raw, standard_and_nullspace_force, subspace_proxy, ImpedanceMethod,
    LimitDirection, StiffnessOptions, VirtualMapping,
};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pose_deg(a: f64, b: f64) -> FingerPose {
    FingerPose::from_deg(a, b)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn free_space_keeps_the_actual_value() {
    assert_eq!(clamp_desired(20.0, 30.0, LimitDirection::Upper), 20.0);
    assert_eq!(clamp_desired(20.0, 30.0, LimitDirection::Lower), 30.0);
}

#[test]
fn penetrating_joint_is_pulled_back_to_its_limit() {
    let q_d = clamp_desired_pose(&pose_deg(35.0, 25.0), &pose_deg(30.0, 30.0), LimitDirection::Upper);
    assert!(close(q_d.q_o1, 30f64.to_radians(), 1e-15) && close(q_d.q_o2, 25f64.to_radians(), 1e-15));
    let at = pose_deg(30.0, 30.0);
    assert_eq!(clamp_desired_pose(&at, &at, LimitDirection::Upper), at);
    let t = joint_level_torques(&at, &at, &[100.0, 100.0]);
    assert_eq!((t.tau_1, t.tau_2), (0.0, 0.0));
}

#[test]
fn actuator_wall_is_a_linear_spring() {
    assert_eq!(actuator_level_force(30.0, 2.0, 20.0), 0.0);
    assert!(close(actuator_level_force(30.0, 2.0, 33.0), -6.0, 1e-12));
}

/// Quasi-static user pushing with a constant force into the actuator wall.
fn penetration(k_ac: f64, push: f64) -> f64 {
    let lim = 30.0;
    let mut x = 25.0;
    for _ in 0..20000 {
        x += 0.01 * (push + actuator_level_force(lim, k_ac, x));
    }
    x - lim
}

#[test]
fn softer_wall_lets_the_user_in_further() {
    let soft = penetration(1.0, 3.0);
    let hard = penetration(4.0, 3.0);
    assert!(soft > hard && hard > 0.0, "{soft} {hard}");
    assert!(close(soft, 3.0, 1e-6) && close(hard, 0.75, 1e-6));
}

fn slope_columns(slope: f64) -> (Vector2<f64>, Vector2<f64>) {
    (Vector2::new(1.0, 0.0), passive_column_for_slope(slope))
}

#[test]
fn recorded_torque_is_infeasible_and_projects_to_the_checkpoint() {
    let (a, p) = slope_columns(0.6761);
    let tau = JointTorques::new(-0.36652, -0.19199);
    assert!(p.dot(&tau.vector()).abs() > 1e-3);
    let r = project_torques_raw(&a, &p, &tau).unwrap();
    assert!(close(r.tau.tau_1, -0.34062, 5e-4) && close(r.tau.tau_2, -0.23029, 5e-4), "{r:?}");
    // The feasible line is tau_2 = 0.6761 tau_1.
    assert!(close(r.tau.tau_2 / r.tau.tau_1, 0.6761, 1e-12));
}

#[test]
fn feasible_torque_is_its_own_proxy() {
    let (a, p) = slope_columns(0.6761);
    let tau = JointTorques::new(-1.0, -0.6761);
    let r = project_torques_raw(&a, &p, &tau).unwrap();
    assert!((r.tau.vector() - tau.vector()).amax() < 1e-15);
}

#[test]
fn projection_beats_random_feasible_torques() {
    let (a, p) = slope_columns(0.6761);
    let tau = JointTorques::new(-0.36652, -0.19199);
    let star = project_torques_raw(&a, &p, &tau).unwrap().tau.vector();
    let best = (star - tau.vector()).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let s: f64 = rng.gen_range(-2.0..2.0);
        let cand = Vector2::new(s, 0.6761 * s);
        assert!(best <= (cand - tau.vector()).norm() + 1e-15);
    }
}

#[test]
fn pose_proxy_hand_case() {
    let k = Matrix2::identity();
    let p = Vector2::new(1.0, -1.0);
    let a = Vector2::new(1.0, 0.0);
    let zero = FingerPose::new(0.0, 0.0);
    let r = project_pose_raw(&a, &p, &k, &zero, &FingerPose::new(2.0, 0.0)).unwrap();
    assert!(close(r.q.q_o1, 1.0, 1e-15) && close(r.q.q_o2, 1.0, 1e-15));
    // Constrained least squares through the KKT system as a second route.
    let kkt = nalgebra::Matrix3::new(1.0, 0.0, p.x, 0.0, 1.0, p.y, p.x, p.y, 0.0);
    let sol = kkt.lu().solve(&nalgebra::Vector3::new(2.0, 0.0, 0.0)).unwrap();
    assert!(close(sol.x, r.q.q_o1, 1e-12) && close(sol.y, r.q.q_o2, 1e-12));
    let same = project_pose_raw(&a, &p, &k, &zero, &zero).unwrap();
    assert_eq!((same.q, same.tau.tau_1, same.tau.tau_2), (zero, 0.0, 0.0));
}

#[test]
fn degenerate_stiffness_is_reported() {
    let e = project_pose_raw(&Vector2::x(), &Vector2::new(1.0, -1.0), &Matrix2::zeros(), &FingerPose::default(), &pose_deg(1.0, 1.0))
        .unwrap_err();
    assert_eq!(e.code(), "DegenerateK");
}

#[test]
fn alignment_of_parallel_and_opposite_motion() {
    let q = [FingerPose::new(0.0, 0.0), FingerPose::new(0.1, 0.2)];
    let toward = [FingerPose::new(0.5, 1.0), FingerPose::new(0.0, 0.0)];
    let away = [FingerPose::new(-0.5, -1.0), FingerPose::new(0.0, 0.0)];
    assert!(close(behavior_alignment(&toward, &q)[0].unwrap(), 1.0, 1e-12));
    assert!(close(behavior_alignment(&away, &q)[0].unwrap(), -1.0, 1e-12));
}

#[test]
fn compliant_user_moves_toward_the_proxy() {
    // The hand yields to the rendered torque, plus small tremor.
    let (a, p) = (Vector2::new(1.0, 0.3), Vector2::new(0.6761, -1.0));
    let k = Matrix2::new(2.0, 0.0, 0.0, 1.0);
    let q_lim = pose_deg(30.0, 30.0);
    let mut q = pose_deg(45.0, 50.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut qs, mut stars) = (Vec::new(), Vec::new());
    // Sample while the proxy pulls by more than a degree; closer than that, tremor dominates.
    loop {
        let q_d = clamp_desired_pose(&q, &q_lim, LimitDirection::Upper);
        let r = project_pose_raw(&a, &p, &k, &q, &q_d).unwrap();
        if (r.q.vector() - q.vector()).norm() < 1f64.to_radians() {
            break;
        }
        qs.push(q);
        stars.push(r.q);
        let step = 0.05 * (r.q.vector() - q.vector());
        let n = 2e-4;
        q = FingerPose::new(q.q_o1 + step.x + rng.gen_range(-n..n), q.q_o2 + step.y + rng.gen_range(-n..n));
    }
    assert!(qs.len() > 10 && qs.len() < 1000, "{}", qs.len());
    let al: Vec<f64> = behavior_alignment(&stars, &qs).into_iter().flatten().collect();
    let mean = al.iter().sum::<f64>() / al.len() as f64;
    assert!(mean > 0.8, "{mean}");
}

fn map(j: DMatrix<f64>, actuated: Vec<usize>, z_x: DMatrix<f64>) -> VirtualMapping {
    let na = actuated.len();
    VirtualMapping::new(j, actuated, DMatrix::identity(na, na), z_x).unwrap()
}

#[test]
fn consistent_virtual_motion_is_reproduced_exactly() {
    let j = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
    let v = DVector::from_vec(vec![0.3, -0.7]);
    let m = map(j.clone(), vec![0, 1], DMatrix::identity(2, 2));
    let r = subspace_proxy(&m, &(&j * &v)).unwrap();
    assert!((r.delta_q - v).amax() < 1e-12);
}

#[test]
fn single_column_least_squares() {
    let m = map(DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), vec![0], DMatrix::identity(2, 2));
    let r = subspace_proxy(&m, &DVector::from_vec(vec![2.0, 0.0])).unwrap();
    assert!(close(r.delta_q[0], 1.0, 1e-12));
    let z = subspace_proxy(&m, &DVector::zeros(2)).unwrap();
    assert_eq!(z.tau_a[0], 0.0);
}

#[test]
fn decoupled_map_gives_equal_standard_and_nullspace_forces() {
    let m = map(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]), vec![0], DMatrix::identity(2, 2));
    let f = standard_and_nullspace_force(&m, &DVector::from_vec(vec![0.4, -1.1])).unwrap();
    assert!((f.standard - f.nullspace).amax() < 1e-12);
}

#[test]
fn displacement_along_the_unactuated_direction_gives_no_nullspace_force() {
    let m = map(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), vec![0], DMatrix::identity(2, 2));
    let f = standard_and_nullspace_force(&m, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert!(f.nullspace.amax() < 1e-12);
    assert!(close(f.standard[0], 1.0, 1e-12));
}

#[test]
fn subspace_impedance_ignores_the_mapping() {
    let z_q = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
    for j in [DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]), DMatrix::identity(3, 3) * 7.0] {
        let m = VirtualMapping::new(j, vec![0, 2], z_q.clone(), DMatrix::identity(3, 3)).unwrap();
        let d = displayed_impedance(ImpedanceMethod::Subspace, &m).unwrap();
        assert!(d.passive);
        // Only the actuated rows and columns carry Z_q.
        let mut expected = DMatrix::zeros(3, 3);
        for (r, &i) in [0usize, 2].iter().enumerate() {
            for (c, &k) in [0usize, 2].iter().enumerate() {
                expected[(i, k)] = -z_q[(r, c)];
            }
        }
        assert!((d.matrix.clone() - expected).amax() < 1e-15);
    }
    let zero = VirtualMapping::new(DMatrix::identity(2, 2), vec![0], DMatrix::zeros(1, 1), DMatrix::identity(2, 2)).unwrap();
    let d = displayed_impedance(ImpedanceMethod::Subspace, &zero).unwrap();
    assert!(d.passive && d.matrix.amax() == 0.0);
}

#[test]
fn skewed_virtual_impedance_breaks_the_standard_method() {
    let m = exo_core::acceptance::crafted_standard_case().unwrap();
    let d = displayed_impedance(ImpedanceMethod::Standard, &m).unwrap();
    assert!(!d.passive);
    assert!(d.eigenvalues.iter().any(|e| e.0 > 0.0));
}

#[test]
fn finger_proxies_are_passive_for_positive_stiffness() {
    let (a, p) = (Vector2::new(1.0, 0.3), Vector2::new(0.6761, -1.0));
    let k = Matrix2::new(500.0, 0.0, 0.0, 800.0);
    for m in [ImpedanceMethod::ProxyTorque, ImpedanceMethod::ProxyPose] {
        let d = finger_impedance(m, &a, &p, &k, Some(&Matrix2::identity())).unwrap();
        assert!(d.passive, "{m:?}: {:?}", d.eigenvalues);
        assert!(d.actuator_row.is_some());
    }
}

#[test]
fn proportional_torque_gives_its_stiffness() {
    let n = 2000;
    let vel: Vec<[f64; 2]> = (0..n).map(|i| [(i as f64 * 0.01).sin() + 2.0, 1.5]).collect();
    let tau: Vec<[f64; 2]> = vel.iter().map(|v| [5.0 * v[0], 5.0 * v[1]]).collect();
    let e = estimate_joint_stiffness(&tau, &vel, &StiffnessOptions::default()).unwrap();
    assert!(close(e.k[0], 5.0, 1e-6) && close(e.k[1], 5.0, 1e-6), "{:?}", e.k);
    assert_eq!(e.low_confidence, [false, false]);
}

#[test]
fn still_joint_pins_the_estimate_and_flags_it() {
    let n = 500;
    let e = estimate_joint_stiffness(&vec![[0.0, 0.0]; n], &vec![[0.0, 0.0]; n], &StiffnessOptions::default()).unwrap();
    let o = StiffnessOptions::default();
    assert_eq!(e.k, [o.k_min, o.k_min]);
    assert_eq!(e.low_confidence, [true, true]);
    assert_eq!(estimate_joint_stiffness(&[], &[], &o).unwrap_err().code(), "EmptySeries");
}

fn column() -> impl Strategy<Value = Vector2<f64>> {
    (-3.0f64..3.0, -3.0f64..3.0).prop_filter("nonzero", |(a, b)| a.hypot(*b) > 0.1).prop_map(|(a, b)| Vector2::new(a, b))
}

proptest! {
    #[test]
    fn torque_projection_is_idempotent_feasible_and_minimal(p in column(), t1 in -5.0f64..5.0, t2 in -5.0f64..5.0) {
        let a = Vector2::new(1.0, 0.0);
        let tau = JointTorques::new(t1, t2);
        let once = project_torques_raw(&a, &p, &tau).unwrap().tau;
        let twice = project_torques_raw(&a, &p, &once).unwrap().tau;
        prop_assert!((once.vector() - twice.vector()).amax() < 1e-12);
        prop_assert!(p.dot(&once.vector()).abs() <= 1e-10 * once.vector().norm().max(1.0));
        // The residual lies along p, orthogonal to the feasible line.
        let feasible_dir = Vector2::new(p.y, -p.x);
        prop_assert!((tau.vector() - once.vector()).dot(&feasible_dir).abs() < 1e-10);
    }

    #[test]
    fn pose_projection_is_feasible_and_minimal(
        p in column(),
        k1 in 0.5f64..5.0,
        k2 in 0.5f64..5.0,
        o in (-1.0f64..1.0, -1.0f64..1.0),
        d in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let k = Matrix2::new(k1, 0.0, 0.0, k2);
        let q_o = FingerPose::new(o.0, o.1);
        let q_d = FingerPose::new(d.0, d.1);
        let r = project_pose_raw(&Vector2::x(), &p, &k, &q_o, &q_d).unwrap();
        let load = k * (r.q.vector() - q_o.vector());
        prop_assert!(p.dot(&load).abs() <= 1e-10 * load.norm().max(1.0));
        let kp = k * p;
        prop_assert!((q_d.vector() - r.q.vector()).dot(&Vector2::new(kp.y, -kp.x)).abs() < 1e-10);
    }

    #[test]
    fn subspace_is_passive_for_any_positive_definite_impedance(
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
        let z_q = &l * l.transpose() + DMatrix::identity(2, 2) * 1e-3;
        let j = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-2.0..2.0));
        let m = VirtualMapping::new(j, vec![0, 1], z_q, DMatrix::identity(3, 3)).unwrap();
        let d = displayed_impedance(ImpedanceMethod::Subspace, &m).unwrap();
        prop_assert!(d.passive);
    }

    #[test]
    fn nullspace_force_never_loads_the_unactuated_direction(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-2.0..2.0));
        let m = map(j.clone(), vec![0], DMatrix::identity(3, 3));
        let proj = nonactuated_projector(&m).unwrap();
        let f = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
        let jn = j.column(1);
        prop_assert!(jn.dot(&(proj * f)).abs() < 1e-9);
    }

    #[test]
    fn stiffness_stays_within_its_clamps(noise in proptest::collection::vec(-1.0f64..1.0, 10..300)) {
        let vel: Vec<[f64; 2]> = noise.iter().enumerate().map(|(i, v)| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            [s * v.abs() * 1e-2, -s * v * 1e-3]
        }).collect();
        let tau: Vec<[f64; 2]> = noise.iter().map(|v| [v * 50.0, -v * 3.0]).collect();
        let o = StiffnessOptions::default();
        let e = estimate_joint_stiffness(&tau, &vel, &o).unwrap();
        for k in e.series.iter().flatten() {
            prop_assert!((o.k_min..=o.k_max).contains(k));
        }
    }
}
