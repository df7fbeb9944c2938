use exo_core::geometry::{
    geometry_to_doc, load_geometry, loop_residuals, points, residual_partials, state_residuals, Finger, FingerPose,
    LinkLengths, MeasuredState, MechanismGeometry, MechanismState,
};
use exo_core::kinematics::{
    calibration_pose, closed_form, solve_calibration, solve_fk_analytic, solve_fk_numeric, solve_ik, wrap_pi,
    SolveOptions, Solver,
};
use exo_core::Error;
use proptest::prelude::*;

fn index() -> MechanismGeometry {
    MechanismGeometry::index()
}

fn ik(q1: f64, q2: f64) -> MechanismState {
    solve_ik(&index(), &FingerPose::from_deg(q1, q2), &SolveOptions::default()).unwrap().state
}

fn pose_err(a: &FingerPose, b: &FingerPose) -> f64 {
    wrap_pi(a.q_o1 - b.q_o1).abs().max(wrap_pi(a.q_o2 - b.q_o2).abs())
}

#[test]
fn presets_carry_the_reported_lengths() {
    let g = index();
    let l = g.lengths();
    assert_eq!(l.as_array(), [39.0, 16.0, 9.0, 40.0, 27.0, 43.0]);
    assert_eq!(l, LinkLengths::optimum(Finger::Index));
    assert_eq!((g.l_kh(), g.l_bk, g.l_gh(), g.l_ab, g.l_gf), (72.0, 35.0, 86.0, 18.0, 46.0));
    for f in [Finger::Middle, Finger::Ring, Finger::Little] {
        let g = MechanismGeometry::preset(f);
        g.validate().unwrap();
        assert_eq!(g.lengths(), LinkLengths::optimum(f));
    }
}

#[test]
fn negative_length_is_rejected_by_name() {
    let e = load_geometry("[links]\nl_AB = -1\n").unwrap_err();
    assert!(matches!(e, Error::InvalidField { ref field, .. } if field == "l_AB"), "{e:?}");
    assert_eq!(e.code(), "ValidationError");
}

#[test]
fn geometry_document_round_trips() {
    let mut g = MechanismGeometry::preset(Finger::Ring);
    g.l_lm = 47.5;
    let back = load_geometry(&format!("preset = \"ring\"\n{}", geometry_to_doc(&g))).unwrap();
    for ((n, a), (_, b)) in g.named_lengths().into_iter().zip(back.named_lengths()) {
        assert!((a - b).abs() < 1e-9, "{n}");
    }
    assert!((g.q_kn - back.q_kn).abs() < 1e-12 && (g.q_lk - back.q_lk).abs() < 1e-12);
    let relative = load_geometry("[links]\nl_CD = 10\nl_EF = 25\n").unwrap();
    assert_eq!((relative.l_cd(), relative.l_ef()), (10.0, 25.0));
}

#[test]
fn solved_states_close_every_loop() {
    for (q1, q2) in [(0.0, 0.0), (30.0, 40.0), (80.0, 90.0), (10.0, 85.0)] {
        let s = ik(q1, q2);
        assert!(state_residuals(&index(), &s).amax() < 1e-9, "({q1}, {q2})");
    }
}

#[test]
fn residuals_are_pure() {
    let s = ik(25.0, 35.0);
    let g = index();
    let a = loop_residuals(&g, &s.pose, &s.meas, &s.passive);
    let b = loop_residuals(&g, &s.pose, &s.meas, &s.passive);
    assert_eq!(a.as_slice(), b.as_slice());
}

/// Which variables (state order) appear in each loop, written out from the
/// loop definitions rather than read from the code.
const DEPENDS: [[bool; 10]; 4] = {
    const F: bool = false;
    const T: bool = true;
    //  q_o1 q_o2 l_x q_B q_K q_D q_G q_N c1 c2
    [
        [F, F, T, T, T, F, F, T, F, F],
        [T, F, F, T, T, F, F, F, T, F],
        [T, T, F, T, T, T, F, F, F, T],
        [F, F, F, T, T, T, T, F, F, F],
    ]
};

#[test]
fn each_loop_depends_on_its_own_variables_only() {
    let g = index();
    let s = ik(30.0, 45.0);
    let base = state_residuals(&g, &s);
    let partials = residual_partials(&g, &s);
    for var in 0..10 {
        let mut a = s.to_array();
        a[var] += if matches!(var, 2 | 8 | 9) { 1.0 } else { 0.05 };
        let r = state_residuals(&g, &MechanismState::from_array(a));
        for lp in 0..4 {
            let changed = (r[2 * lp] - base[2 * lp]).abs() + (r[2 * lp + 1] - base[2 * lp + 1]).abs() > 1e-12;
            assert_eq!(changed, DEPENDS[lp][var], "loop {} variable {var}", lp + 1);
            let nonzero = partials[(2 * lp, var)] != 0.0 || partials[(2 * lp + 1, var)] != 0.0;
            assert_eq!(nonzero, DEPENDS[lp][var], "partials loop {} variable {var}", lp + 1);
        }
    }
}

#[test]
fn extended_pose_sits_near_the_stroke_minimum() {
    let s = ik(0.0, 0.0);
    assert!((0.0..=2.0).contains(&s.meas.l_x), "{}", s.meas.l_x);
    // Dense scan of the stroke at fixed q_B: the closed form lands closest to
    // the extended pose at the solved stroke.
    let g = index();
    let mut best = (f64::INFINITY, f64::NAN);
    for k in -1000..=1000 {
        let l_x = s.meas.l_x + k as f64 * 1e-3;
        if let Ok(f) = closed_form(&g, &MeasuredState { l_x, q_b: s.meas.q_b }) {
            let d = f.pose.q_o1.hypot(f.pose.q_o2);
            if d < best.0 {
                best = (d, l_x);
            }
        }
    }
    assert!((best.1 - s.meas.l_x).abs() <= 1.5e-3, "{best:?} vs {}", s.meas.l_x);
}

#[test]
fn flexion_ramp_stays_inside_the_linear_limits() {
    let solver = Solver::new(index(), SolveOptions::default()).unwrap();
    let mut warm = None;
    let mut last = f64::NEG_INFINITY;
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        let sol = solver.ik(&FingerPose::from_deg(70.0 * t, 90.0 * t), warm.as_ref()).unwrap();
        let s = sol.state;
        assert!(s.meas.l_x >= last - 1e-9, "stroke decreased at step {k}");
        assert!(s.meas.l_x <= 50.0 && s.passive.c_1 <= 50.0 && s.passive.c_2 <= 40.0, "step {k}: {s:?}");
        last = s.meas.l_x;
        warm = Some(s);
    }
}

#[test]
fn forward_recovers_the_inverse_input() {
    let s = ik(30.0, 40.0);
    let f = solve_fk_numeric(&index(), &s.meas, &SolveOptions::default()).unwrap();
    assert!(pose_err(&f.state.pose, &FingerPose::from_deg(30.0, 40.0)) < 1e-6);
}

#[test]
fn stroke_outside_the_sensor_range_is_a_precondition_error() {
    let e = solve_fk_numeric(&index(), &MeasuredState { l_x: 60.0, q_b: 1.0 }, &SolveOptions::default()).unwrap_err();
    assert_eq!(e.code(), "PreconditionError");
}

/// Smooth flex-extend cycle at 1 kHz, the shape of a grasp demonstration.
fn demo_trajectory() -> Vec<FingerPose> {
    (0..=2000)
        .map(|k| {
            let t = k as f64 / 1000.0;
            let s = 0.5 - 0.5 * (std::f64::consts::PI * t).cos();
            FingerPose::from_deg(70.0 * s, 85.0 * s)
        })
        .collect()
}

#[test]
fn trajectory_replay_through_inverse_then_forward() {
    let g = index();
    let solver = Solver::new(g.clone(), SolveOptions::default()).unwrap();
    let (mut wi, mut wf) = (None, None);
    let mut worst = 0.0f64;
    let mut worst_analytic = 0.0f64;
    for (k, q) in demo_trajectory().iter().enumerate() {
        let inv = solver.ik(q, wi.as_ref()).unwrap();
        if k > 0 {
            assert!(inv.iterations <= 10, "sample {k}: {} iterations", inv.iterations);
        }
        let fwd = solver.fk(&inv.state.meas, wf.as_ref()).unwrap();
        worst = worst.max(pose_err(&fwd.state.pose, q));
        let an = solve_fk_analytic(&g, &inv.state.meas).unwrap();
        worst_analytic = worst_analytic.max(pose_err(&an.pose, &fwd.state.pose));
        wi = Some(inv.state);
        wf = Some(fwd.state);
    }
    assert!(worst < 1e-6, "{worst}");
    assert!(worst_analytic < 1e-6, "{worst_analytic}");
}

#[test]
fn warm_started_steps_of_one_degree_converge_quickly() {
    let solver = Solver::new(index(), SolveOptions::default()).unwrap();
    let mut warm = Some(ik(20.0, 20.0));
    for k in 1..=40 {
        let sol = solver.ik(&FingerPose::from_deg(20.0 + k as f64, 20.0 + k as f64), warm.as_ref()).unwrap();
        assert!(sol.iterations <= 10, "{k}: {}", sol.iterations);
        warm = Some(sol.state);
    }
}

#[test]
fn round_trip_on_a_coarse_grid() {
    let g = index();
    for i in 0..9 {
        for j in 0..10 {
            let q = FingerPose::from_deg(i as f64 * 10.0, j as f64 * 10.0);
            let s = solve_ik(&g, &q, &SolveOptions::default()).unwrap().state;
            let f = solve_fk_numeric(&g, &s.meas, &SolveOptions::default()).unwrap();
            assert!(pose_err(&f.state.pose, &q) < 1e-6, "{q:?}");
        }
    }
}

#[test]
fn slider_travel_is_the_distance_from_the_mcp() {
    let g = index();
    let s = solve_fk_analytic(&g, &ik(35.0, 50.0).meas).unwrap();
    let p = points(&g, &s);
    // Zero track offset: c_1 = sqrt(|LI|^2 - 0^2).
    assert!((s.passive.c_1 - p.i.norm()).abs() < 1e-9);
    assert!((s.passive.c_2 - (p.j - p.m).norm()).abs() < 1e-9);
}

#[test]
fn short_actuator_links_open_the_triangle() {
    let mut g = index();
    g.l_ab = 1.0;
    g.l_bk = 1.0;
    let e = closed_form(&g, &ik(30.0, 30.0).meas).unwrap_err();
    assert_eq!(e.code(), "GeometryDegenerate");
}

#[test]
fn calibration_recovers_the_anthropometric_length() {
    let opts = SolveOptions::unbounded();
    let truth = index();
    let c2 = exo_core::kinematics::CALIBRATION_C2;
    let l_x = exo_core::kinematics::calibration_stroke(&truth, c2, &opts).unwrap();
    let meas = calibration_pose(&truth, c2, l_x, &opts).unwrap().meas;
    let mut seed = truth.clone();
    seed.l_lm = 50.0;
    let c = solve_calibration(&seed, &meas, c2, &opts).unwrap();
    assert!((c.l_lm - 55.3).abs() < 0.1, "{}", c.l_lm);
    assert!(!c.implausible);
}

#[test]
fn calibration_with_a_closed_slider_is_reported() {
    let opts = SolveOptions::unbounded();
    let meas = ik(0.0, 30.0).meas;
    let e = solve_calibration(&index(), &meas, 0.0, &opts).unwrap_err();
    assert!(matches!(e.code(), "ImplausibleLength" | "NonConvergence"), "{e:?}");
}

#[test]
fn identical_requests_give_identical_states() {
    let a = ik(42.0, 17.0);
    let b = ik(42.0, 17.0);
    assert_eq!(a.to_array(), b.to_array());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn forward_inverts_inverse(q1 in 0.0f64..80.0, q2 in 0.0f64..90.0) {
        let g = index();
        let q = FingerPose::from_deg(q1, q2);
        let s = solve_ik(&g, &q, &SolveOptions::default()).unwrap().state;
        let f = solve_fk_numeric(&g, &s.meas, &SolveOptions::default()).unwrap();
        prop_assert!(pose_err(&f.state.pose, &q) < 1e-6);
        let a = solve_fk_analytic(&g, &s.meas).unwrap();
        for (x, y) in a.to_array().iter().zip(f.state.to_array()) {
            prop_assert!(wrap_pi(x - y).abs() < 1e-6 || (x - y).abs() < 1e-6);
        }
    }
}
