//! Haptic rendering for the single-actuator finger: virtual limits, proxy
//! torques and poses on the feasible line, and the linearised subspace
//! proxy for general device-to-virtual maps, with impedance audits.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::differential::{JacobianSet, JointTorques};
use crate::error::{Error, Result};
use crate::geometry::FingerPose;

/// Relative threshold below which a column or Gram matrix counts as zero.
const RANK_EPS: f64 = 1e-12;
/// Eigenvalue real parts up to this value still count as passive.
pub const PASSIVITY_TOL: f64 = 1e-12;

/// Which side of the limit is free space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitDirection {
    /// Values above the limit penetrate the virtual object.
    #[default]
    Upper,
    Lower,
}

/// Desired value under a virtual limit: the actual value while free, the
/// limit once beyond it.
pub fn clamp_desired(value: f64, limit: f64, direction: LimitDirection) -> f64 {
    match direction {
        LimitDirection::Upper => value.min(limit),
        LimitDirection::Lower => value.max(limit),
    }
}

pub fn clamp_desired_pose(q: &FingerPose, q_lim: &FingerPose, direction: LimitDirection) -> FingerPose {
    FingerPose::new(clamp_desired(q.q_o1, q_lim.q_o1, direction), clamp_desired(q.q_o2, q_lim.q_o2, direction))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum RenderTarget {
    /// Stroke limit in mm with contact stiffness in N/mm.
    Actuator { l_x_lim: f64, k_ac: f64 },
    /// Joint limits in rad with diagonal contact stiffness in N mm/rad.
    Joint { q_lim: [f64; 2], k_cont: [f64; 2] },
}

impl RenderTarget {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            RenderTarget::Actuator { k_ac, .. } => *k_ac >= 0.0,
            RenderTarget::Joint { k_cont, .. } => k_cont.iter().all(|k| *k >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidField { field: "stiffness".into(), reason: "must be >= 0".into() })
        }
    }
}

/// F_a = K_ac (l_x,d - l_x), kept resistive: positive demands are zeroed.
pub fn actuator_level_force(l_x_lim: f64, k_ac: f64, l_x: f64) -> f64 {
    let l_xd = clamp_desired(l_x, l_x_lim, LimitDirection::Upper);
    (k_ac * (l_xd - l_x)).min(0.0)
}

/// tau = K_cont (q_d - q) with q_d clamped to the joint limits.
pub fn joint_level_torques(q: &FingerPose, q_lim: &FingerPose, k_cont: &[f64; 2]) -> JointTorques {
    let q_d = clamp_desired_pose(q, q_lim, LimitDirection::Upper);
    JointTorques::new(k_cont[0] * (q_d.q_o1 - q.q_o1), k_cont[1] * (q_d.q_o2 - q.q_o2))
}

/// Orthogonal projector removing the span of `v`.
fn reject(v: &Vector2<f64>) -> Result<Matrix2<f64>> {
    let n2 = v.norm_squared();
    if !(n2 > RANK_EPS * RANK_EPS) {
        return Err(Error::DegeneratePassiveColumn);
    }
    Ok(Matrix2::identity() - v * v.transpose() / n2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TorqueProxy {
    pub tau: JointTorques,
    /// Actuator force producing `tau`.
    pub f_a: f64,
}

/// Closest torques (Euclidean) with no load on the passive joint, given the
/// active and passive columns of J_A.
pub fn project_torques_raw(j_active: &Vector2<f64>, j_passive: &Vector2<f64>, tau: &JointTorques) -> Result<TorqueProxy> {
    let p = reject(j_passive)?;
    let t = p * tau.vector();
    Ok(TorqueProxy { tau: JointTorques::from_vector(t), f_a: j_active.dot(&t) })
}

pub fn project_torques(jac: &JacobianSet, tau: &JointTorques) -> Result<TorqueProxy> {
    project_torques_raw(&jac.j_active, &jac.j_passive, tau)
}

/// Passive column whose feasible torque line has slope tau_2 / tau_1 = `slope`.
pub fn passive_column_for_slope(slope: f64) -> Vector2<f64> {
    Vector2::new(slope, -1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseProxy {
    pub q: FingerPose,
    pub tau: JointTorques,
    pub f_a: f64,
}

/// Closest pose (Euclidean in q) whose stiffness-induced torque
/// K_stiff (q* - q_o) loads no passive joint.
pub fn project_pose_raw(
    j_active: &Vector2<f64>,
    j_passive: &Vector2<f64>,
    k_stiff: &Matrix2<f64>,
    q_o: &FingerPose,
    q_d: &FingerPose,
) -> Result<PoseProxy> {
    let k = k_stiff * j_passive;
    let p = reject(&k).map_err(|_| Error::DegenerateK)?;
    let qo = q_o.vector();
    let dq = p * (q_d.vector() - qo);
    let q_star = qo + dq;
    let tau = k_stiff * dq;
    Ok(PoseProxy {
        q: FingerPose::new(q_star.x, q_star.y),
        tau: JointTorques::from_vector(tau),
        f_a: j_active.dot(&tau),
    })
}

pub fn project_pose(jac: &JacobianSet, k_stiff: &Matrix2<f64>, q_o: &FingerPose, q_d: &FingerPose) -> Result<PoseProxy> {
    project_pose_raw(&jac.j_active, &jac.j_passive, k_stiff, q_o, q_d)
}

/// Cosine between the step towards the proxy and the step actually taken,
/// per sample. `None` where either step is zero.
pub fn behavior_alignment(q_star: &[FingerPose], q: &[FingerPose]) -> Vec<Option<f64>> {
    let n = q.len().min(q_star.len());
    if n < 2 {
        return Vec::new();
    }
    (0..n - 1)
        .map(|i| {
            let a = q_star[i].vector() - q[i].vector();
            let b = q[i + 1].vector() - q[i].vector();
            let (na, nb) = (a.norm(), b.norm());
            (na > 0.0 && nb > 0.0).then(|| a.dot(&b) / (na * nb))
        })
        .collect()
}

/// Device-to-virtual Jacobian J (m x n) with the actuated device
/// coordinates listed in `actuated`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualMapping {
    pub j: DMatrix<f64>,
    pub actuated: Vec<usize>,
    /// Device-space rendering impedance, one row/column per actuated coordinate.
    pub z_q: DMatrix<f64>,
    /// Virtual-space impedance (m x m).
    pub z_x: DMatrix<f64>,
}

impl VirtualMapping {
    pub fn new(j: DMatrix<f64>, actuated: Vec<usize>, z_q: DMatrix<f64>, z_x: DMatrix<f64>) -> Result<Self> {
        let (m, n) = j.shape();
        let bad = |f: &str, r: &str| Err(Error::InvalidField { field: f.into(), reason: r.into() });
        if m == 0 || n == 0 {
            return bad("j", "empty Jacobian");
        }
        if actuated.is_empty() || actuated.iter().any(|&i| i >= n) {
            return bad("actuated", "indices must select device coordinates");
        }
        let mut sorted = actuated.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != actuated.len() {
            return bad("actuated", "duplicate index");
        }
        if z_q.shape() != (actuated.len(), actuated.len()) {
            return bad("z_q", "must be square over the actuated coordinates");
        }
        if z_x.shape() != (m, m) {
            return bad("z_x", "must be square over the virtual coordinates");
        }
        Ok(VirtualMapping { j, actuated, z_q, z_x })
    }

    pub fn m(&self) -> usize {
        self.j.nrows()
    }

    pub fn n(&self) -> usize {
        self.j.ncols()
    }

    /// Selection S (k x n).
    pub fn selection(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.actuated.len(), self.n());
        for (r, &c) in self.actuated.iter().enumerate() {
            s[(r, c)] = 1.0;
        }
        s
    }

    pub fn non_actuated(&self) -> Vec<usize> {
        (0..self.n()).filter(|i| !self.actuated.contains(i)).collect()
    }

    pub fn j_a(&self) -> DMatrix<f64> {
        self.j.select_columns(&self.actuated)
    }

    pub fn j_n(&self) -> DMatrix<f64> {
        self.j.select_columns(&self.non_actuated())
    }
}

/// Solve G x = b for symmetric G, failing when G is numerically singular
/// relative to its largest eigenvalue.
fn gram_solve(g: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(max > 0.0) || min <= RANK_EPS * max {
        return None;
    }
    g.clone().cholesky().map(|c| c.solve(b)).or_else(|| g.clone().lu().solve(b))
}

/// I - J_n (J_n^T J_n)^-1 J_n^T, or I when every coordinate is actuated.
pub fn nonactuated_projector(map: &VirtualMapping) -> Result<DMatrix<f64>> {
    let m = map.m();
    let j_n = map.j_n();
    if j_n.ncols() == 0 {
        return Ok(DMatrix::identity(m, m));
    }
    let g = j_n.transpose() * &j_n;
    let x = gram_solve(&g, &j_n.transpose()).ok_or(Error::RankDeficientNonactuated)?;
    Ok(DMatrix::identity(m, m) - &j_n * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProxy {
    pub delta_q: DVector<f64>,
    pub tau_a: DVector<f64>,
}

/// Least-squares device displacement for a virtual displacement, then the
/// actuated force Z_q S dq.
pub fn subspace_proxy(map: &VirtualMapping, delta_x: &DVector<f64>) -> Result<SubspaceProxy> {
    if delta_x.len() != map.m() {
        return Err(Error::InvalidField { field: "delta_x".into(), reason: "length must match J rows".into() });
    }
    let jt = map.j.transpose();
    let g = &jt * &map.j;
    let rhs = DMatrix::from_column_slice(map.n(), 1, (&jt * delta_x).as_slice());
    let dq = gram_solve(&g, &rhs).ok_or(Error::RankDeficientMapping)?.column(0).into_owned();
    let tau_a = &map.z_q * (map.selection() * &dq);
    Ok(SubspaceProxy { delta_q: dq, tau_a })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedForces {
    pub standard: DVector<f64>,
    pub nullspace: DVector<f64>,
}

/// Jacobian-transpose force on the actuated coordinates, with and without
/// removing the part that would load non-actuated ones.
pub fn standard_and_nullspace_force(map: &VirtualMapping, delta_x: &DVector<f64>) -> Result<ProjectedForces> {
    if delta_x.len() != map.m() {
        return Err(Error::InvalidField { field: "delta_x".into(), reason: "length must match J rows".into() });
    }
    let f = &map.z_x * delta_x;
    let j_a_t = map.j_a().transpose();
    let p = nonactuated_projector(map)?;
    Ok(ProjectedForces { standard: &j_a_t * &f, nullspace: &j_a_t * (p * &f) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpedanceMethod {
    Standard,
    Nullspace,
    Subspace,
    ProxyTorque,
    ProxyPose,
}

impl ImpedanceMethod {
    pub const ALL: [ImpedanceMethod; 5] = [
        ImpedanceMethod::Standard,
        ImpedanceMethod::Nullspace,
        ImpedanceMethod::Subspace,
        ImpedanceMethod::ProxyTorque,
        ImpedanceMethod::ProxyPose,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ImpedanceMethod::Standard => "standard",
            ImpedanceMethod::Nullspace => "nullspace",
            ImpedanceMethod::Subspace => "subspace",
            ImpedanceMethod::ProxyTorque => "proxy_torque",
            ImpedanceMethod::ProxyPose => "proxy_pose",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidField { field: "method".into(), reason: format!("unknown method {s:?}") })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplayedImpedance {
    /// d tau / d q over the device (or finger joint) coordinates.
    pub matrix: DMatrix<f64>,
    /// Eigenvalues as (real, imaginary) pairs, sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub passive: bool,
    /// Actuator-force row for the finger proxies (F_a per joint offset).
    pub actuator_row: Option<Vector2<f64>>,
}

fn eigen_pairs(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let sym = (m - m.transpose()).amax() <= 1e-14 * m.amax().max(1.0);
    let mut ev: Vec<(f64, f64)> = if sym {
        m.clone().symmetric_eigen().eigenvalues.iter().map(|&v| (v, 0.0)).collect()
    } else {
        m.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect()
    };
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    ev
}

fn impedance_from(matrix: DMatrix<f64>, actuator_row: Option<Vector2<f64>>) -> DisplayedImpedance {
    let eigenvalues = eigen_pairs(&matrix);
    let passive = eigenvalues.iter().all(|e| e.0 <= PASSIVITY_TOL);
    DisplayedImpedance { matrix, eigenvalues, passive, actuator_row }
}

/// Theoretical displayed impedance of the three mapping-based methods,
/// ignoring the change of J and of the proxy with q.
pub fn displayed_impedance(method: ImpedanceMethod, map: &VirtualMapping) -> Result<DisplayedImpedance> {
    let s = map.selection();
    let m = match method {
        ImpedanceMethod::Standard => -(s.transpose() * map.j_a().transpose() * &map.z_x * &map.j),
        ImpedanceMethod::Nullspace => {
            let p = nonactuated_projector(map)?;
            -(s.transpose() * map.j_a().transpose() * p * &map.z_x * &map.j)
        }
        ImpedanceMethod::Subspace => -(s.transpose() * &map.z_q * &s),
        ImpedanceMethod::ProxyTorque | ImpedanceMethod::ProxyPose => {
            return Err(Error::InvalidField {
                field: "method".into(),
                reason: "finger proxy methods take a JacobianSet".into(),
            })
        }
    };
    Ok(impedance_from(m, None))
}

/// Displayed impedance of the finger proxies in joint space. The proxy
/// torque uses K_cont; the proxy pose additionally needs K_stiff.
pub fn finger_impedance(
    method: ImpedanceMethod,
    j_active: &Vector2<f64>,
    j_passive: &Vector2<f64>,
    k_cont: &Matrix2<f64>,
    k_stiff: Option<&Matrix2<f64>>,
) -> Result<DisplayedImpedance> {
    let m = match method {
        ImpedanceMethod::ProxyTorque => -(reject(j_passive)? * k_cont),
        ImpedanceMethod::ProxyPose => {
            let ks = k_stiff.copied().unwrap_or_else(Matrix2::identity);
            -(k_cont * reject(&(ks * j_passive)).map_err(|_| Error::DegenerateK)?)
        }
        _ => {
            return Err(Error::InvalidField { field: "method".into(), reason: "not a finger proxy method".into() })
        }
    };
    let row = m.transpose() * j_active;
    Ok(impedance_from(DMatrix::from_column_slice(2, 2, m.as_slice()), Some(row)))
}

/// Finite-difference impedance d tau_a / d q_a between consecutive samples
/// of one actuated coordinate; `None` where the coordinate did not move.
pub fn finite_difference_impedance(q_a: &[f64], tau_a: &[f64], min_step: f64) -> Vec<Option<f64>> {
    q_a.windows(2)
        .zip(tau_a.windows(2))
        .map(|(q, t)| {
            let dq = q[1] - q[0];
            (dq.abs() > min_step).then(|| (t[1] - t[0]) / dq)
        })
        .collect()
}

/// Z_x = I / avg(||J_a||)^2 over a trajectory of Jacobians.
pub fn normalized_z_x(j_as: &[DMatrix<f64>], m: usize) -> Result<DMatrix<f64>> {
    if j_as.is_empty() {
        return Err(Error::EmptySeries);
    }
    let avg = j_as.iter().map(|j| j.norm()).sum::<f64>() / j_as.len() as f64;
    if !(avg > 0.0) {
        return Err(Error::RankDeficientMapping);
    }
    Ok(DMatrix::identity(m, m) / (avg * avg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StiffnessOptions {
    /// Velocity magnitude (rad/s) below which the quotient is guarded.
    pub epsilon: f64,
    pub k_min: f64,
    pub k_max: f64,
    /// Half-life of the exponential smoothing, in seconds.
    pub half_life: f64,
    pub dt: f64,
}

impl Default for StiffnessOptions {
    fn default() -> Self {
        StiffnessOptions { epsilon: 1e-3, k_min: 1.0, k_max: 1e4, half_life: 0.05, dt: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StiffnessEstimate {
    /// Smoothed, clamped K_j per sample.
    pub series: Vec<[f64; 2]>,
    pub k: [f64; 2],
    /// Set when more than half of the samples hit the velocity guard.
    pub low_confidence: [bool; 2],
}

impl StiffnessEstimate {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.k[0], 0.0, 0.0, self.k[1])
    }
}

/// Joint stiffness from torque over joint velocity, guarded near zero
/// velocity, smoothed and clamped.
pub fn estimate_joint_stiffness(
    torque: &[[f64; 2]],
    velocity: &[[f64; 2]],
    opts: &StiffnessOptions,
) -> Result<StiffnessEstimate> {
    let n = torque.len().min(velocity.len());
    if n == 0 {
        return Err(Error::EmptySeries);
    }
    if !(opts.epsilon > 0.0 && opts.k_min > 0.0 && opts.k_min <= opts.k_max && opts.dt > 0.0 && opts.half_life > 0.0) {
        return Err(Error::InvalidField { field: "stiffness".into(), reason: "inconsistent estimator options".into() });
    }
    let alpha = 1.0 - 0.5f64.powf(opts.dt / opts.half_life);
    let mut state: Option<[f64; 2]> = None;
    let mut guarded = [0usize; 2];
    let mut series = Vec::with_capacity(n);
    for i in 0..n {
        let raw: [f64; 2] = std::array::from_fn(|j| {
            let v = velocity[i][j];
            let v = if v.abs() < opts.epsilon {
                guarded[j] += 1;
                if v < 0.0 {
                    -opts.epsilon
                } else {
                    opts.epsilon
                }
            } else {
                v
            };
            (torque[i][j] / v).clamp(opts.k_min, opts.k_max)
        });
        let next = match state {
            None => raw,
            Some(s) => std::array::from_fn(|j| s[j] + alpha * (raw[j] - s[j])),
        };
        let next = next.map(|k| k.clamp(opts.k_min, opts.k_max));
        state = Some(next);
        series.push(next);
    }
    let k = state.unwrap_or([opts.k_min; 2]);
    Ok(StiffnessEstimate { series, k, low_confidence: guarded.map(|g| 2 * g > n) })
}
