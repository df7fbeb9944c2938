//! Differential kinematics and statics.
//!
//! Rows of the linearised loop system are taken in phalanx frames for loops
//! 2 and 3: the two components across the phalanges form the output rows
//! (they do not involve the slider rates), the remaining six rows are loop 1
//! (x, y), loop 4 (x, y) and the components of loops 2 and 3 along the
//! phalanges. At a consistent state the rotation of a row pair does not
//! change the solution set, and with this ordering J_Cp only degenerates at
//! true toggle positions of the actuator or coupler triangles.

use nalgebra::{Matrix2, SMatrix, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{du, residual_partials, u, FingerPose, MechanismGeometry, MechanismState};
use crate::kinematics::{Solution, SolveOptions, Solver};

pub type Mat6x2 = SMatrix<f64, 6, 2>;
pub type Mat2x6 = SMatrix<f64, 2, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;

/// Default condition-number limit for J_Cp.
pub const COND_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianSet {
    pub j_om: Matrix2<f64>,
    pub j_op: Mat6x2,
    pub j_rm: Matrix2<f64>,
    pub j_rp: Mat2x6,
    pub j_cm: Mat6x2,
    pub j_cp: Mat6,
    /// Maps (l_x rate, q_B rate) to (q_o1 rate, q_o2 rate).
    pub j_a: Matrix2<f64>,
    /// Column of J_A pairing with F_A.
    pub j_active: Vector2<f64>,
    /// Column of J_A pairing with tau_B.
    pub j_passive: Vector2<f64>,
    pub cond_cp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct JointTorques {
    pub tau_1: f64,
    pub tau_2: f64,
}

impl JointTorques {
    pub fn new(tau_1: f64, tau_2: f64) -> Self {
        JointTorques { tau_1, tau_2 }
    }
    pub fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.tau_1, self.tau_2)
    }
    pub fn from_vector(v: Vector2<f64>) -> Self {
        JointTorques { tau_1: v.x, tau_2: v.y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ActuatorWrench {
    pub f_a: f64,
    pub tau_b: f64,
}

/// Partials of the reordered residual rows with respect to the ten
/// variables (columns as in [`MechanismState::to_array`]).
pub fn ordered_partials(geom: &MechanismGeometry, s: &MechanismState) -> SMatrix<f64, 8, 10> {
    let full = residual_partials(geom, s);
    let q1 = s.pose.q_o1;
    let q12 = s.pose.q_o1 + s.pose.q_o2;
    let (n2, t2) = (du(q1), u(q1));
    let (n3, t3) = (du(q12), u(q12));
    let mut out = SMatrix::<f64, 8, 10>::zeros();
    for c in 0..10 {
        let l2 = Vector2::new(full[(2, c)], full[(3, c)]);
        let l3 = Vector2::new(full[(4, c)], full[(5, c)]);
        out[(0, c)] = n2.dot(&l2);
        out[(1, c)] = n3.dot(&l3);
        out[(2, c)] = full[(0, c)];
        out[(3, c)] = full[(1, c)];
        out[(4, c)] = full[(6, c)];
        out[(5, c)] = full[(7, c)];
        out[(6, c)] = t2.dot(&l2);
        out[(7, c)] = t3.dot(&l3);
    }
    out
}

fn condition(m: &Mat6) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Reduce the eight loop equations to the 2x2 map J_A.
pub fn assemble_jacobian(geom: &MechanismGeometry, state: &MechanismState) -> Result<JacobianSet> {
    assemble_jacobian_with_limit(geom, state, COND_LIMIT)
}

pub fn assemble_jacobian_with_limit(
    geom: &MechanismGeometry,
    state: &MechanismState,
    cond_limit: f64,
) -> Result<JacobianSet> {
    let p = ordered_partials(geom, state);
    let j_om = Matrix2::from_fn(|r, c| p[(r, c)]);
    let j_op = Mat6x2::from_fn(|r, c| p[(r + 2, c)]);
    let j_rm = Matrix2::from_fn(|r, c| -p[(r, c + 2)]);
    let j_rp = Mat2x6::from_fn(|r, c| -p[(r, c + 4)]);
    let j_cm = Mat6x2::from_fn(|r, c| -p[(r + 2, c + 2)]);
    let j_cp = Mat6::from_fn(|r, c| -p[(r + 2, c + 4)]);
    let singular = || Error::SingularConstraintBlock {
        condition: f64::INFINITY,
        q_o1: state.pose.q_o1,
        q_o2: state.pose.q_o2,
    };
    let cond_cp = condition(&j_cp);
    if !(cond_cp <= cond_limit) {
        return Err(Error::SingularConstraintBlock { condition: cond_cp, q_o1: state.pose.q_o1, q_o2: state.pose.q_o2 });
    }
    let lu = j_cp.lu();
    let x_op = lu.solve(&j_op).ok_or_else(singular)?;
    let x_cm = lu.solve(&j_cm).ok_or_else(singular)?;
    let lhs = j_om - j_rp * x_op;
    let rhs = j_rm - j_rp * x_cm;
    let j_a = lhs.try_inverse().ok_or(Error::SingularJacobian)? * rhs;
    Ok(JacobianSet {
        j_om,
        j_op,
        j_rm,
        j_rp,
        j_cm,
        j_cp,
        j_a,
        j_active: j_a.column(0).into_owned(),
        j_passive: j_a.column(1).into_owned(),
        cond_cp,
    })
}

/// Physical transmission: finger torques produced by actuator force F_A
/// with zero torque at the instrumented joint.
pub fn torques_from_actuator(jac: &JacobianSet, f_a: f64) -> Result<JointTorques> {
    let inv_t = jac.j_a.transpose().try_inverse().ok_or(Error::SingularJacobian)?;
    Ok(JointTorques::from_vector(inv_t * Vector2::new(f_a, 0.0)))
}

/// (F_A, tau_B) = J_A^T tau.
pub fn actuator_from_torques(jac: &JacobianSet, tau: &JointTorques) -> ActuatorWrench {
    let w = jac.j_a.transpose() * tau.vector();
    ActuatorWrench { f_a: w.x, tau_b: w.y }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub pose: FingerPose,
    pub tau_1: f64,
    pub tau_2: f64,
    pub ratio: f64,
    pub same_sign: bool,
    /// Error code when the cell could not be evaluated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub stable_fraction: f64,
}

/// Rectangular pose grid in degrees, inclusive of both ends.
pub fn pose_grid(q1_max_deg: f64, q2_max_deg: f64, step_deg: f64) -> Vec<Vec<FingerPose>> {
    if step_deg <= 0.0 {
        return Vec::new();
    }
    let n1 = (q1_max_deg / step_deg).round() as usize;
    let n2 = (q2_max_deg / step_deg).round() as usize;
    (0..=n1)
        .map(|i| (0..=n2).map(|j| FingerPose::from_deg(i as f64 * step_deg, j as f64 * step_deg)).collect())
        .collect()
}

/// Walk a grid row by row, warm-starting each cell from its neighbour.
/// Calls `visit` with the inverse solution (or its error) for every cell.
pub fn scan_grid<F>(solver: &Solver, grid: &[Vec<FingerPose>], mut visit: F)
where
    F: FnMut(&FingerPose, std::result::Result<&Solution, &Error>),
{
    let mut row_start: Option<MechanismState> = None;
    for row in grid {
        let mut prev = row_start;
        for (j, pose) in row.iter().enumerate() {
            let r = solver.ik(pose, prev.as_ref());
            match &r {
                Ok(sol) => {
                    prev = Some(sol.state);
                    if j == 0 {
                        row_start = Some(sol.state);
                    }
                    visit(pose, Ok(sol));
                }
                Err(e) => visit(pose, Err(e)),
            }
        }
    }
}

/// Torques for F_A = 1 N over a pose grid with sign agreement flags.
pub fn grasp_stability_report(solver: &Solver, grid: &[Vec<FingerPose>]) -> StabilityReport {
    let mut rows = Vec::new();
    scan_grid(solver, grid, |pose, r| {
        let row = match r.map_err(|e| e.clone()).and_then(|sol| {
            let jac = assemble_jacobian(&solver.geom, &sol.state)?;
            torques_from_actuator(&jac, 1.0)
        }) {
            Ok(t) => StabilityRow {
                pose: *pose,
                tau_1: t.tau_1,
                tau_2: t.tau_2,
                ratio: t.tau_1 / t.tau_2,
                same_sign: t.tau_1 * t.tau_2 > 0.0,
                error: None,
            },
            Err(e) => StabilityRow {
                pose: *pose,
                tau_1: f64::NAN,
                tau_2: f64::NAN,
                ratio: f64::NAN,
                same_sign: false,
                error: Some(e.code().to_string()),
            },
        };
        rows.push(row);
    });
    let stable = rows.iter().filter(|r| r.same_sign).count();
    let stable_fraction = if rows.is_empty() { 1.0 } else { stable as f64 / rows.len() as f64 };
    StabilityReport { rows, stable_fraction }
}

/// Like [`grasp_stability_report`] but starting from a bare geometry. When
/// the mechanism cannot even be assembled every cell carries that error.
pub fn grasp_report_for(geom: &MechanismGeometry, grid: &[Vec<FingerPose>], opts: &SolveOptions) -> StabilityReport {
    match Solver::new(geom.clone(), *opts) {
        Ok(solver) => grasp_stability_report(&solver, grid),
        Err(e) => {
            let rows: Vec<StabilityRow> = grid
                .iter()
                .flatten()
                .map(|pose| StabilityRow {
                    pose: *pose,
                    tau_1: f64::NAN,
                    tau_2: f64::NAN,
                    ratio: f64::NAN,
                    same_sign: false,
                    error: Some(e.code().to_string()),
                })
                .collect();
            let stable_fraction = if rows.is_empty() { 1.0 } else { 0.0 };
            StabilityReport { rows, stable_fraction }
        }
    }
}
