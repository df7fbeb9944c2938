//! Pose solvers: inverse, numeric forward, closed-form forward and the
//! calibration variant that treats the proximal phalanx length as unknown.
//!
//! The numeric solvers run damped Newton on the eight loop residuals. Without
//! a warm start they begin from the (40 deg, 45 deg) configuration, which is
//! located once by a coarse scan of the closed-form route, and walk to the
//! target in short continuation steps so that the assembly mode is kept.

use nalgebra::{SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

pub use crate::geometry::MechanismState;
use crate::geometry::{
    loop_residuals, residual_partials, u, Branch, FingerPose, MeasuredState, MechanismGeometry, PassiveState,
    Residual, RomBox,
};
use crate::error::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;
const PI: f64 = std::f64::consts::PI;

/// Clamp margin applied to cosine arguments before declaring a triangle open.
pub const ACOS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Residual infinity norm in mm.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial step fraction, halved whenever a step increases the residual.
    pub damping: f64,
    pub warm_start: Option<MechanismState>,
    /// Joint box used for branch policing.
    pub rom: RomBox,
    /// Slack around `rom` before a forward solution is called ambiguous.
    pub rom_margin: f64,
    /// Reject inverse solutions outside stroke/slider limits.
    pub enforce_bounds: bool,
    pub stroke_max: f64,
    pub c1_max: f64,
    pub c2_max: f64,
    /// Largest joint change per continuation step (rad).
    pub continuation_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-9,
            max_iterations: 100,
            damping: 1.0,
            warm_start: None,
            rom: RomBox::default(),
            rom_margin: 10f64.to_radians(),
            enforce_bounds: true,
            stroke_max: 50.0,
            c1_max: 50.0,
            c2_max: 40.0,
            continuation_step: 5f64.to_radians(),
        }
    }
}

impl SolveOptions {
    pub fn unbounded() -> Self {
        SolveOptions { enforce_bounds: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Precondition("tolerance must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Precondition("max_iterations must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Precondition("damping must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A converged state with solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution {
    pub state: MechanismState,
    pub iterations: usize,
    /// Final residual infinity norm (mm).
    pub residual: f64,
}

/// Wrap into (-pi, pi].
pub fn wrap_pi(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// Bring every angle of a state into its canonical interval: q_B in
/// [0, 2 pi), all others in (-pi, pi].
pub fn canonical(mut s: MechanismState) -> MechanismState {
    s.pose.q_o1 = wrap_pi(s.pose.q_o1);
    s.pose.q_o2 = wrap_pi(s.pose.q_o2);
    s.meas.q_b = s.meas.q_b.rem_euclid(TAU);
    let p = &mut s.passive;
    p.q_k = wrap_pi(p.q_k);
    p.q_d = wrap_pi(p.q_d);
    p.q_g = wrap_pi(p.q_g);
    p.q_n = wrap_pi(p.q_n);
    s
}

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

/// Damped Newton on eight unknowns.
fn newton<F>(x0: Vec8, f: F, opts: &SolveOptions) -> std::result::Result<(Vec8, usize, f64), (usize, f64)>
where
    F: Fn(&Vec8) -> (Residual, Mat8),
{
    let mut x = x0;
    let (mut r, mut jac) = f(&x);
    let mut norm = r.amax();
    let mut lambda = opts.damping;
    for it in 0..opts.max_iterations {
        if norm < opts.tolerance {
            return Ok((x, it, norm));
        }
        let Some(step) = jac.lu().solve(&r) else {
            return Err((it, norm));
        };
        let mut accepted = false;
        let mut trial_lambda = lambda;
        while trial_lambda > 1e-6 {
            let xn = x - trial_lambda * step;
            let (rn, jn) = f(&xn);
            let nn = rn.amax();
            if nn.is_finite() && nn < norm {
                x = xn;
                r = rn;
                jac = jn;
                norm = nn;
                accepted = true;
                break;
            }
            trial_lambda *= 0.5;
            lambda = trial_lambda;
        }
        if !accepted {
            return Err((it + 1, norm));
        }
        if lambda < opts.damping {
            lambda = (2.0 * lambda).min(opts.damping);
        }
    }
    if norm < opts.tolerance {
        Ok((x, opts.max_iterations, norm))
    } else {
        Err((opts.max_iterations, norm))
    }
}

const IK_COLS: [usize; 8] = [2, 3, 4, 5, 6, 7, 8, 9];
const FK_COLS: [usize; 8] = [0, 1, 4, 5, 6, 7, 8, 9];

fn pack(s: &MechanismState, cols: &[usize; 8]) -> Vec8 {
    let a = s.to_array();
    Vec8::from_fn(|i, _| a[cols[i]])
}

fn unpack(base: &MechanismState, x: &Vec8, cols: &[usize; 8]) -> MechanismState {
    let mut a = base.to_array();
    for (i, &c) in cols.iter().enumerate() {
        a[c] = x[i];
    }
    MechanismState::from_array(a)
}

fn solve_cols(
    geom: &MechanismGeometry,
    start: &MechanismState,
    cols: &[usize; 8],
    opts: &SolveOptions,
) -> Result<Solution> {
    let f = |x: &Vec8| {
        let s = unpack(start, x, cols);
        let r = loop_residuals(geom, &s.pose, &s.meas, &s.passive);
        let full = residual_partials(geom, &s);
        let j = Mat8::from_fn(|i, k| full[(i, cols[k])]);
        (r, j)
    };
    match newton(pack(start, cols), f, opts) {
        Ok((x, iterations, residual)) => {
            Ok(Solution { state: canonical(unpack(start, &x, cols)), iterations, residual })
        }
        Err((iterations, residual)) => Err(Error::NonConvergence { iterations, residual }),
    }
}

/// Signs of the two circle closures realised by a state.
pub fn branches(geom: &MechanismGeometry, s: &MechanismState) -> (Branch, Branch) {
    let cross = |a: Vector2<f64>, b: Vector2<f64>| a.x * b.y - a.y * b.x;
    let p = geom.point_k() - geom.l_ab * u(s.meas.q_b) - geom.point_n();
    let s1 = cross(p, u(s.passive.q_n));
    let w = geom.s_g() * u(s.passive.q_k) - geom.l_bd * u(s.meas.q_b);
    let s4 = cross(w, u(s.passive.q_d));
    let b = |v: f64| if v >= 0.0 { Branch::Left } else { Branch::Right };
    (b(s1), b(s4))
}

fn check_branch(geom: &MechanismGeometry, s: &MechanismState) -> Result<()> {
    if branches(geom, s) != (geom.actuator_branch, geom.coupler_branch) {
        return Err(Error::AmbiguousBranch { q_o1: s.pose.q_o1, q_o2: s.pose.q_o2 });
    }
    Ok(())
}

fn check_bounds(s: &MechanismState, opts: &SolveOptions) -> Result<()> {
    let m = &s.meas;
    let p = &s.passive;
    if m.l_x < 0.0 {
        return Err(Error::InfeasiblePose { bound: "l_x >= 0".into(), value: m.l_x });
    }
    if m.l_x > opts.stroke_max {
        return Err(Error::InfeasiblePose { bound: format!("l_x <= {}", opts.stroke_max), value: m.l_x });
    }
    if p.c_1 < 0.0 || p.c_1 > opts.c1_max {
        return Err(Error::InfeasiblePose { bound: format!("0 <= c_1 <= {}", opts.c1_max), value: p.c_1 });
    }
    if p.c_2 < 0.0 || p.c_2 > opts.c2_max {
        return Err(Error::InfeasiblePose { bound: format!("0 <= c_2 <= {}", opts.c2_max), value: p.c_2 });
    }
    Ok(())
}

fn steps_between(a: &[f64], b: &[f64], step: f64) -> usize {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ((d / step).ceil() as usize).max(1)
}

/// Inverse kinematics from a given start state, walking the pose in short
/// steps. No bound or branch checks.
pub fn ik_from(
    geom: &MechanismGeometry,
    pose: &FingerPose,
    start: &MechanismState,
    opts: &SolveOptions,
) -> Result<Solution> {
    let p0 = start.pose;
    let n = steps_between(&[p0.q_o1, p0.q_o2], &[pose.q_o1, pose.q_o2], opts.continuation_step);
    let mut cur = *start;
    let mut total = 0;
    let mut last = None;
    for k in 1..=n {
        let t = k as f64 / n as f64;
        cur.pose = FingerPose::new(p0.q_o1 + t * (pose.q_o1 - p0.q_o1), p0.q_o2 + t * (pose.q_o2 - p0.q_o2));
        let sol = solve_cols(geom, &cur, &IK_COLS, opts)?;
        total += sol.iterations;
        cur = sol.state;
        last = Some(sol);
    }
    let mut sol = last.expect("at least one step");
    sol.state.pose = *pose;
    sol.iterations = total;
    Ok(sol)
}

/// Numeric forward kinematics from a given start state, walking the
/// measurements in short steps. No branch checks.
pub fn fk_from(
    geom: &MechanismGeometry,
    meas: &MeasuredState,
    start: &MechanismState,
    opts: &SolveOptions,
) -> Result<Solution> {
    let m0 = start.meas;
    let dq = wrap_pi(meas.q_b - m0.q_b);
    let n = steps_between(&[m0.l_x / 10.0, 0.0], &[meas.l_x / 10.0, dq], opts.continuation_step);
    let mut cur = *start;
    let mut total = 0;
    let mut last = None;
    for k in 1..=n {
        let t = k as f64 / n as f64;
        cur.meas = MeasuredState { l_x: m0.l_x + t * (meas.l_x - m0.l_x), q_b: m0.q_b + t * dq };
        let sol = solve_cols(geom, &cur, &FK_COLS, opts)?;
        total += sol.iterations;
        cur = sol.state;
        last = Some(sol);
    }
    let mut sol = last.expect("at least one step");
    sol.state.meas.l_x = meas.l_x;
    sol.iterations = total;
    Ok(sol)
}

/// Pose used as the default starting point.
pub fn mid_pose() -> FingerPose {
    FingerPose::from_deg(40.0, 45.0)
}

/// Locate a consistent state at `pose` without any prior: scan the
/// closed-form route over stroke and q_B, then polish with Newton.
pub fn bootstrap(geom: &MechanismGeometry, pose: &FingerPose, opts: &SolveOptions) -> Result<MechanismState> {
    let target = pose.vector();
    let mut best: Option<(f64, MechanismState)> = None;
    let mut l_x = -40.0;
    while l_x <= 90.0 {
        for k in 0..720 {
            let q_b = k as f64 * TAU / 720.0;
            if let Ok(s) = closed_form(geom, &MeasuredState { l_x, q_b }) {
                let d = (s.pose.vector() - target).map(wrap_pi).amax();
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, s));
                }
            }
        }
        l_x += 1.0;
    }
    let (_, s) = best.ok_or(Error::NonConvergence { iterations: 0, residual: f64::INFINITY })?;
    let sol = ik_from(geom, pose, &s, &SolveOptions { continuation_step: 1f64.to_radians(), ..*opts })?;
    Ok(sol.state)
}

/// Caller-owned solver holding the cached mid-range configuration.
#[derive(Debug, Clone)]
pub struct Solver {
    pub geom: MechanismGeometry,
    pub opts: SolveOptions,
    pub mid: MechanismState,
}

impl Solver {
    pub fn new(geom: MechanismGeometry, opts: SolveOptions) -> Result<Self> {
        geom.validate()?;
        opts.validate()?;
        let mid = bootstrap(&geom, &mid_pose(), &opts)?;
        check_branch(&geom, &mid)?;
        Ok(Solver { geom, opts, mid })
    }

    pub fn ik(&self, pose: &FingerPose, warm: Option<&MechanismState>) -> Result<Solution> {
        let start = warm.or(self.opts.warm_start.as_ref()).unwrap_or(&self.mid);
        let sol = ik_from(&self.geom, pose, start, &self.opts)?;
        check_branch(&self.geom, &sol.state)?;
        if self.opts.enforce_bounds {
            check_bounds(&sol.state, &self.opts)?;
        }
        Ok(sol)
    }

    pub fn fk(&self, meas: &MeasuredState, warm: Option<&MechanismState>) -> Result<Solution> {
        meas.check_ranges()?;
        let start = warm.or(self.opts.warm_start.as_ref()).unwrap_or(&self.mid);
        let sol = fk_from(&self.geom, meas, start, &self.opts)?;
        if !self.opts.rom.contains(&sol.state.pose, self.opts.rom_margin) {
            return Err(Error::AmbiguousBranch { q_o1: sol.state.pose.q_o1, q_o2: sol.state.pose.q_o2 });
        }
        check_branch(&self.geom, &sol.state)?;
        Ok(sol)
    }
}

/// Inverse kinematics: actuator, instrumented joint and passives for a pose.
pub fn solve_ik(geom: &MechanismGeometry, pose: &FingerPose, opts: &SolveOptions) -> Result<Solution> {
    if !opts.rom.contains(pose, opts.rom_margin) {
        return Err(Error::Precondition(format!(
            "pose ({:.3} deg, {:.3} deg) outside the feasibility box",
            pose.q_o1.to_degrees(),
            pose.q_o2.to_degrees()
        )));
    }
    let solver = match opts.warm_start {
        Some(w) => Solver { geom: geom.clone(), opts: *opts, mid: w },
        None => Solver::new(geom.clone(), *opts)?,
    };
    solver.ik(pose, None)
}

/// Numeric forward kinematics: finger pose and passives for measurements.
pub fn solve_fk_numeric(geom: &MechanismGeometry, meas: &MeasuredState, opts: &SolveOptions) -> Result<Solution> {
    let solver = match opts.warm_start {
        Some(w) => Solver { geom: geom.clone(), opts: *opts, mid: w },
        None => Solver::new(geom.clone(), *opts)?,
    };
    solver.fk(meas, None)
}

fn tri_angle(adj1: f64, adj2: f64, opp: f64, name: &str) -> Result<f64> {
    let c = (adj1 * adj1 + adj2 * adj2 - opp * opp) / (2.0 * adj1 * adj2);
    if !c.is_finite() || c.abs() > 1.0 + ACOS_EPS {
        return Err(Error::GeometryDegenerate { triangle: name.into(), argument: c });
    }
    Ok(c.clamp(-1.0, 1.0).acos())
}

fn angle_of(v: Vector2<f64>) -> f64 {
    v.y.atan2(v.x)
}

/// Closed-form forward kinematics by the law of cosines and Pythagoras.
///
/// 1. Actuator triangle: sides `l_act + l_x`, `l_BK` and `|K - N - l_AB u(q_B)|`
///    give `q_N` and `q_K`.
/// 2. Coupler triangle D-F-G: sides `l_FD`, `l_GF`, `|G - D|` give `q_D`, `q_G`.
/// 3. Slider I: `c_1 = sqrt(l_LI^2 - l_IIp^2)` with the slider track through L
///    (`l_IIp = 0`), and `q_o1` the direction of I.
/// 4. Slider J: `c_2 = |J - M|`, `q_o1 + q_o2` its direction.
pub fn closed_form(geom: &MechanismGeometry, meas: &MeasuredState) -> Result<MechanismState> {
    let a = geom.l_act + meas.l_x;
    if a <= 0.0 {
        return Err(Error::GeometryDegenerate { triangle: "actuator".into(), argument: f64::NAN });
    }
    let ub = u(meas.q_b);
    let p = geom.point_k() - geom.l_ab * ub - geom.point_n();
    let lp = p.norm();
    let alpha = tri_angle(a, lp, geom.l_bk, "actuator N-A-K")?;
    let q_n = angle_of(p) + geom.actuator_branch.sign() * alpha;
    let q_k = angle_of((p - a * u(q_n)) / geom.l_bk);
    let w = geom.s_g() * u(q_k) - geom.l_bd * ub;
    let lw = w.norm();
    let beta = tri_angle(geom.l_fd, lw, geom.l_gf, "coupler D-F-G")?;
    let q_d = angle_of(w) + geom.coupler_branch.sign() * beta;
    let q_g = angle_of((geom.l_fd * u(q_d) - w) / geom.l_gf);
    let b = geom.point_k() - geom.l_bk * u(q_k);
    let i = b + geom.s_i() * ub;
    let l_li = i.norm();
    let l_iip = 0.0;
    let c_1 = (l_li * l_li - l_iip * l_iip).sqrt();
    let q_o1 = angle_of(i);
    let d = b + geom.l_bd * ub;
    let j = d + geom.s_j() * u(q_d);
    let jm = j - geom.l_lm * u(q_o1);
    let c_2 = jm.norm();
    let q_o2 = wrap_pi(angle_of(jm) - q_o1);
    Ok(canonical(MechanismState {
        pose: FingerPose::new(q_o1, q_o2),
        meas: *meas,
        passive: PassiveState { q_k, q_d, q_g, q_n, c_1, c_2 },
    }))
}

/// Closed-form forward kinematics. Unlike the numeric route this does not
/// police sensor ranges; only the triangle inequalities can fail.
pub fn solve_fk_analytic(geom: &MechanismGeometry, meas: &MeasuredState) -> Result<MechanismState> {
    closed_form(geom, meas)
}

/// Distal slider stop used for calibration (mm). At the 40 mm travel limit
/// the slider is almost perpendicular to the proximal phalanx, where the two
/// l_LM roots of the distal loop merge.
pub const CALIBRATION_C2: f64 = 35.0;

/// Result of the proximal phalanx estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub l_lm: f64,
    pub state: MechanismState,
    pub iterations: usize,
    pub residual: f64,
    /// Set when the estimate falls outside [25, 80] mm.
    pub implausible: bool,
}

// Unknowns: q_o1, q_o2, l_LM, c_1, q_D, q_G, q_K, q_N.
fn calibration_system(
    geom: &MechanismGeometry,
    meas: &MeasuredState,
    c_2: f64,
    x: &Vec8,
) -> (Residual, Mat8) {
    let mut g = geom.clone();
    g.l_lm = x[2];
    let s = MechanismState {
        pose: FingerPose::new(x[0], x[1]),
        meas: *meas,
        passive: PassiveState { q_k: x[6], q_d: x[4], q_g: x[5], q_n: x[7], c_1: x[3], c_2 },
    };
    let r = loop_residuals(&g, &s.pose, &s.meas, &s.passive);
    let full = residual_partials(&g, &s);
    let mut j = Mat8::zeros();
    for row in 0..8 {
        j[(row, 0)] = full[(row, 0)];
        j[(row, 1)] = full[(row, 1)];
        j[(row, 3)] = full[(row, 8)];
        j[(row, 4)] = full[(row, 5)];
        j[(row, 5)] = full[(row, 6)];
        j[(row, 6)] = full[(row, 4)];
        j[(row, 7)] = full[(row, 7)];
    }
    let dl = -u(x[0]);
    j[(4, 2)] = dl.x;
    j[(5, 2)] = dl.y;
    (r, j)
}

/// Estimate the proximal phalanx length from measurements taken while the
/// distal slider rests at `c_2_fixed`. `geom.l_lm` only seeds the search.
pub fn solve_calibration(
    geom: &MechanismGeometry,
    meas: &MeasuredState,
    c_2_fixed: f64,
    opts: &SolveOptions,
) -> Result<Calibration> {
    if !(c_2_fixed > 0.0) {
        return Err(Error::ImplausibleLength { l_lm: f64::NAN });
    }
    // Start from an unbounded inverse solution at the seed length whose
    // distal slider matches c_2_fixed, then walk the measurements.
    let seed = calibration_pose(geom, c_2_fixed, meas.l_x, opts)?;
    let mut x = Vec8::from_column_slice(&[
        seed.pose.q_o1,
        seed.pose.q_o2,
        geom.l_lm,
        seed.passive.c_1,
        seed.passive.q_d,
        seed.passive.q_g,
        seed.passive.q_k,
        seed.passive.q_n,
    ]);
    let dq = wrap_pi(meas.q_b - seed.meas.q_b);
    let n = ((dq.abs() / opts.continuation_step).ceil() as usize).max(1);
    let mut total = 0;
    let mut residual = 0.0;
    for k in 1..=n {
        let t = k as f64 / n as f64;
        let m = MeasuredState { l_x: meas.l_x, q_b: seed.meas.q_b + t * dq };
        let (xn, it, res) = newton(x, |v| calibration_system(geom, &m, c_2_fixed, v), opts)
            .map_err(|(iterations, residual)| Error::NonConvergence { iterations, residual })?;
        x = xn;
        total += it;
        residual = res;
    }
    let l_lm = x[2];
    let state = canonical(MechanismState {
        pose: FingerPose::new(x[0], x[1]),
        meas: *meas,
        passive: PassiveState { q_k: x[6], q_d: x[4], q_g: x[5], q_n: x[7], c_1: x[3], c_2: c_2_fixed },
    });
    Ok(Calibration { l_lm, state, iterations: total, residual, implausible: !(25.0..=80.0).contains(&l_lm) })
}

// Unknowns: q_o1, q_o2, q_B, q_K, q_D, q_G, q_N, c_1 with l_x and c_2 fixed.
const CAL_COLS: [usize; 8] = [0, 1, 3, 4, 5, 6, 7, 8];

/// State where the distal slider sits at `c_2` and the actuator at `l_x`,
/// reached by continuation from the mid-range configuration.
pub fn calibration_pose(
    geom: &MechanismGeometry,
    c_2: f64,
    l_x: f64,
    opts: &SolveOptions,
) -> Result<MechanismState> {
    let mid = bootstrap(geom, &mid_pose(), opts)?;
    let (c0, l0) = (mid.passive.c_2, mid.meas.l_x);
    let n = (((c_2 - c0).abs().max((l_x - l0).abs())) / 0.5).ceil().max(1.0) as usize;
    let mut cur = mid;
    for k in 1..=n {
        let t = k as f64 / n as f64;
        cur.passive.c_2 = c0 + t * (c_2 - c0);
        cur.meas.l_x = l0 + t * (l_x - l0);
        cur = solve_cols(geom, &cur, &CAL_COLS, opts)?.state;
    }
    Ok(cur)
}

/// Default calibration stroke: the stroke at which the distal slider reaches
/// `c_2` with the MCP joint extended.
pub fn calibration_stroke(geom: &MechanismGeometry, c_2: f64, opts: &SolveOptions) -> Result<f64> {
    // Unknowns: q_o2, l_x, q_B, q_K, q_D, q_G, q_N, c_1 with q_o1 = 0 and c_2 fixed.
    const COLS: [usize; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
    let mut cur = bootstrap(geom, &FingerPose::new(0.0, mid_pose().q_o2), opts)?;
    let c0 = cur.passive.c_2;
    let n = (((c_2 - c0).abs()) / 0.5).ceil().max(1.0) as usize;
    for k in 1..=n {
        cur.passive.c_2 = c0 + k as f64 / n as f64 * (c_2 - c0);
        cur = solve_cols(geom, &cur, &COLS, opts)?.state;
    }
    Ok(cur.meas.l_x)
}

fn blend(a: &MechanismGeometry, b: &MechanismGeometry, t: f64) -> MechanismGeometry {
    let m = |x: f64, y: f64| x + t * (y - x);
    MechanismGeometry {
        l_ab: m(a.l_ab, b.l_ab),
        l_bk: m(a.l_bk, b.l_bk),
        l_bc: m(a.l_bc, b.l_bc),
        l_ci: m(a.l_ci, b.l_ci),
        l_bd: m(a.l_bd, b.l_bd),
        l_de: m(a.l_de, b.l_de),
        l_ej: m(a.l_ej, b.l_ej),
        l_bh: m(a.l_bh, b.l_bh),
        l_hg: m(a.l_hg, b.l_hg),
        l_gf: m(a.l_gf, b.l_gf),
        l_fd: m(a.l_fd, b.l_fd),
        l_kn: m(a.l_kn, b.l_kn),
        l_lk: m(a.l_lk, b.l_lk),
        l_act: m(a.l_act, b.l_act),
        q_kn: m(a.q_kn, b.q_kn),
        q_lk: m(a.q_lk, b.q_lk),
        l_lm: m(a.l_lm, b.l_lm),
        actuator_branch: b.actuator_branch,
        coupler_branch: b.coupler_branch,
    }
}

/// Carry a consistent inverse solution at `state.pose` from geometry `from`
/// to geometry `to` by morphing the parameters in small steps.
pub fn retarget(
    from: &MechanismGeometry,
    state: &MechanismState,
    to: &MechanismGeometry,
    opts: &SolveOptions,
) -> Result<Solution> {
    let diff = from
        .named_lengths()
        .iter()
        .zip(to.named_lengths())
        .map(|((_, a), (_, b))| (a - b).abs())
        .fold(0.0, f64::max)
        .max(20.0 * (from.q_kn - to.q_kn).abs().max((from.q_lk - to.q_lk).abs()).to_degrees());
    let n = ((diff / 2.0).ceil() as usize).max(1);
    let mut cur = *state;
    let mut total = 0;
    let mut last = None;
    for k in 1..=n {
        let g = blend(from, to, k as f64 / n as f64);
        let sol = solve_cols(&g, &cur, &IK_COLS, opts)?;
        total += sol.iterations;
        cur = sol.state;
        last = Some(sol);
    }
    let mut sol = last.expect("at least one step");
    sol.iterations = total;
    Ok(sol)
}
