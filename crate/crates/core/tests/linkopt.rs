use exo_core::geometry::{Finger, LinkLengths, MechanismGeometry};
use exo_core::kinematics::{mid_pose, SolveOptions};
use exo_core::linkopt::{
    exhaustive_search, generic_index, screen_candidate, screening_stats, sensitivity_index, sensitivity_scan,
    sensitivity_scan_model, ConstraintSpec, Range, SearchSpace, SensitivityModel,
};
use exo_core::Result;
use proptest::prelude::*;

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn lengths(a: [f64; 6]) -> LinkLengths {
    LinkLengths::from_array(a)
}

#[test]
fn lattice_passes_through_the_anchor() {
    let v = Range::new(30.0, 48.0, 2.0).values(39.0);
    assert_eq!(v.first(), Some(&31.0));
    assert_eq!(v.last(), Some(&47.0));
    assert!(v.contains(&39.0));
    assert_eq!(Range::new(43.0, 43.0, 1.0).values(43.0), vec![43.0]);
}

#[test]
fn single_point_space_returns_the_optimum() {
    let space = SearchSpace::single(MechanismGeometry::index(), LinkLengths::optimum(Finger::Index));
    let r = exhaustive_search(&space, &ConstraintSpec::default(), &opts(), 1).unwrap();
    assert_eq!(r.len(), 1);
    assert!(r[0].feasible, "{:?}", r[0].violation);
    assert_eq!(r[0].lengths.as_array(), [39.0, 16.0, 9.0, 40.0, 27.0, 43.0]);
    assert!(r[0].score.unwrap() > 0.0);
}

#[test]
fn neighbour_overrunning_the_distal_slider_is_linear_c2() {
    let r = screen_candidate(
        &MechanismGeometry::index(),
        lengths([38.0, 15.0, 8.0, 40.0, 26.0, 44.0]),
        &ConstraintSpec::default(),
        &opts(),
    );
    assert!(!r.feasible);
    let v = r.violation.unwrap();
    assert_eq!(v.reason, "linear:c2");
    assert_eq!((v.pose.q_o1.to_degrees().round(), v.pose.q_o2.to_degrees().round()), (0.0, 90.0));
    assert!(v.value > 40.0 && v.value < 40.2, "{}", v.value);
}

#[test]
fn dropping_the_ratio_bounds_admits_more_candidates() {
    let base = MechanismGeometry::index();
    let strict = ConstraintSpec::default();
    let loose = ConstraintSpec { ratio_min: 0.0, ratio_max: f64::INFINITY, ..strict };
    let cands = [
        [39.0, 16.0, 9.0, 40.0, 27.0, 43.0],
        [38.0, 15.0, 8.0, 39.0, 26.0, 42.0],
        [38.0, 15.0, 8.0, 39.0, 26.0, 43.0],
        [38.0, 15.0, 8.0, 39.0, 27.0, 42.0],
        [38.0, 15.0, 8.0, 40.0, 26.0, 44.0],
    ];
    let mut n = [0, 0];
    for c in cands {
        let a = screen_candidate(&base, lengths(c), &strict, &opts());
        let b = screen_candidate(&base, lengths(c), &loose, &opts());
        assert!(!a.feasible || b.feasible, "{c:?}");
        n[0] += a.feasible as usize;
        n[1] += b.feasible as usize;
    }
    assert!(n[1] > n[0], "{n:?}");
}

#[test]
fn box_around_the_optimum_keeps_it_feasible() {
    // One millimetre each way; the full-range run is documented, not tested.
    let space = SearchSpace::preset(Finger::Index).around_anchor(1.0, 1.0);
    let r = exhaustive_search(&space, &ConstraintSpec::default(), &opts(), 2).unwrap();
    assert_eq!(r.len(), 729);
    let opt = [39.0, 16.0, 9.0, 40.0, 27.0, 43.0];
    assert!(r.iter().any(|c| c.feasible && c.lengths.as_array() == opt));
    let scores: Vec<f64> = r.iter().filter_map(|c| c.score).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(scores.iter().all(|p| *p > 0.0));
    assert!(r.iter().skip_while(|c| c.feasible).all(|c| !c.feasible));
    let s = screening_stats(&r);
    assert_eq!(s.total, s.linear + s.static_ + s.solver + s.feasible);
    assert!(s.linear > 0 && s.static_ > 0);
}

#[test]
fn ranking_does_not_depend_on_worker_count() {
    let mut space = SearchSpace::single(MechanismGeometry::index(), LinkLengths::optimum(Finger::Index));
    space.ranges[2] = Range::new(8.0, 10.0, 1.0);
    space.ranges[5] = Range::new(42.0, 44.0, 1.0);
    let cons = ConstraintSpec { step_deg: 5.0, ..Default::default() };
    let a = exhaustive_search(&space, &cons, &opts(), 1).unwrap();
    let b = exhaustive_search(&space, &cons, &opts(), 3).unwrap();
    assert_eq!(a.len(), 9);
    assert_eq!(a, b);
}

struct Stub;

impl SensitivityModel for Stub {
    fn variables(&self) -> Vec<&'static str> {
        vec!["L", "dead"]
    }
    fn baseline(&self, _: &str) -> f64 {
        12.0
    }
    fn outputs(&self, var: &str, v: f64) -> Result<(f64, f64)> {
        Ok(if var == "L" { (2.0 * v, 7.0) } else { (4.0, 9.0) })
    }
}

#[test]
fn proportional_output_has_unit_index_and_inert_input_zero() {
    let r = sensitivity_scan_model(&Stub, 0.05);
    assert!(r.missing.is_empty());
    let l = &r.entries[0];
    assert!((l.si_c1 - 1.0).abs() < 1e-12);
    assert_eq!(l.si_c2, 0.0);
    assert_eq!(l.si_g, 0.0);
    let dead = &r.entries[1];
    assert_eq!((dead.si_c1, dead.si_c2, dead.si_g), (0.0, 0.0, 0.0));
}

#[test]
fn actuator_crank_length_does_not_move_the_sliders() {
    let r = sensitivity_scan(&MechanismGeometry::index(), mid_pose(), 0.1).unwrap();
    assert!(r.missing.is_empty(), "{:?}", r.missing);
    assert_eq!(r.entries.len(), 11);
    let ab = r.entries.iter().find(|e| e.variable == "l_AB").unwrap();
    assert!(ab.si_g.abs() < 1e-3, "{}", ab.si_g);
    let bc = r.entries.iter().find(|e| e.variable == "l_BC").unwrap();
    assert!(bc.si_g.abs() > 1.0);
}

proptest! {
    #[test]
    fn index_is_scale_free(e in 1.0f64..100.0, s in 1.0f64..100.0, k in 0.1f64..10.0, d in 0.01f64..0.3) {
        // S = k E is unit-elastic at every operating point.
        let (e1, e2) = (e * (1.0 - d), e * (1.0 + d));
        prop_assert!((sensitivity_index(e1, e2, k * e1, k * e2) - 1.0).abs() < 1e-9);
        prop_assert_eq!(sensitivity_index(e1, e2, s, s), 0.0);
    }

    #[test]
    fn generic_index_keeps_magnitude_and_agreement_sign(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let g = generic_index(a, b);
        let expected = if a == 0.0 || b == 0.0 { 0.0 } else { a.hypot(b) };
        prop_assert!((g.abs() - expected).abs() < 1e-12);
        prop_assert!(g * a * b >= 0.0);
    }
}
