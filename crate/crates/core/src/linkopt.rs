//! Link-length design: one-at-a-time sensitivity, constraint screening over
//! the joint grid and exhaustive search maximizing force transmission.

use rayon::prelude::*;
use serde::Serialize;

use crate::differential::{assemble_jacobian, pose_grid, torques_from_actuator};
use crate::error::{Error, Result};
use crate::geometry::{Finger, FingerPose, LinkLengths, MechanismGeometry, MechanismState};
use crate::kinematics::{bootstrap, ik_from, retarget, SolveOptions, Solution};

/// Inclusive range of one varied length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64, step: f64) -> Self {
        Range { min, max, step }
    }

    /// Lattice values inside [min, max] through `anchor` with spacing `step`.
    pub fn values(&self, anchor: f64) -> Vec<f64> {
        let a = if anchor >= self.min && anchor <= self.max { anchor } else { self.min };
        let lo = ((a - self.min) / self.step + 1e-9).floor() as i64;
        let hi = ((self.max - a) / self.step + 1e-9).floor() as i64;
        (-lo..=hi).map(|k| a + k as f64 * self.step).collect()
    }
}

/// Search ranges for l_EJ, l_CI, l_CD, l_ED, l_EF, l_BC (in that order).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSpace {
    pub ranges: [Range; 6],
    /// The lattice passes through these lengths (the reported optimum by default).
    pub anchor: LinkLengths,
    pub base: MechanismGeometry,
}

impl SearchSpace {
    pub fn preset(finger: Finger) -> Self {
        let r = Range::new;
        let (ed, ef) = match finger {
            Finger::Middle => (r(40.0, 55.0, 1.0), r(15.0, 30.0, 1.0)),
            Finger::Little => (r(30.0, 40.0, 1.0), r(20.0, 35.0, 1.0)),
            Finger::Index | Finger::Ring => (r(35.0, 45.0, 1.0), r(20.0, 35.0, 1.0)),
        };
        SearchSpace {
            ranges: [r(30.0, 48.0, 1.0), r(16.0, 20.0, 1.0), r(9.0, 20.0, 1.0), ed, ef, r(36.0, 46.0, 1.0)],
            anchor: LinkLengths::optimum(finger),
            base: MechanismGeometry::preset(finger),
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        for r in &mut self.ranges {
            r.step = step;
        }
        self
    }

    /// Box of +-`half` around the anchor, clipped to nothing (may leave the
    /// reported ranges).
    pub fn around_anchor(mut self, half: f64, step: f64) -> Self {
        let a = self.anchor.as_array();
        for (r, v) in self.ranges.iter_mut().zip(a) {
            *r = Range::new(v - half, v + half, step);
        }
        self
    }

    pub fn single(base: MechanismGeometry, l: LinkLengths) -> Self {
        let a = l.as_array();
        SearchSpace { ranges: a.map(|v| Range::new(v, v, 1.0)), anchor: l, base }
    }

    pub fn validate(&self) -> Result<()> {
        for (r, name) in self.ranges.iter().zip(LinkLengths::NAMES) {
            if !(r.min <= r.max) || !(r.step > 0.0) {
                return Err(Error::InvalidField { field: name.into(), reason: "need min <= max and step > 0".into() });
            }
        }
        Ok(())
    }

    /// All candidates in lexicographic order.
    pub fn candidates(&self) -> Vec<LinkLengths> {
        let anchor = self.anchor.as_array();
        let axes: Vec<Vec<f64>> = self.ranges.iter().zip(anchor).map(|(r, a)| r.values(a)).collect();
        let mut out = Vec::new();
        let mut idx = [0usize; 6];
        if axes.iter().any(|a| a.is_empty()) {
            return out;
        }
        loop {
            out.push(LinkLengths::from_array(std::array::from_fn(|k| axes[k][idx[k]])));
            let mut k = 5;
            loop {
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
                if k == 0 {
                    return out;
                }
                k -= 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintSpec {
    pub l_max: f64,
    pub c1_max: f64,
    pub c2_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub q_o1_max_deg: f64,
    pub q_o2_max_deg: f64,
    pub step_deg: f64,
    /// Re-mount the actuator for every candidate so that the extended pose
    /// sits at `extension_stroke`.
    pub rezero_actuator: bool,
    pub extension_stroke: f64,
    /// Score by the worst pose instead of the grid mean.
    pub score_min: bool,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec {
            l_max: 50.0,
            c1_max: 50.0,
            c2_max: 40.0,
            ratio_min: 0.25,
            ratio_max: 7.5,
            q_o1_max_deg: 80.0,
            q_o2_max_deg: 90.0,
            step_deg: 1.0,
            rezero_actuator: true,
            extension_stroke: 1.0,
            score_min: false,
        }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l_max", self.l_max), ("c1_max", self.c1_max), ("c2_max", self.c2_max)] {
            if !(v > 0.0) {
                return Err(Error::InvalidField { field: name.into(), reason: "must be > 0".into() });
            }
        }
        if !(self.ratio_min < self.ratio_max) {
            return Err(Error::InvalidField { field: "ratio_min".into(), reason: "must be < ratio_max".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// `linear:l_x`, `linear:c1`, `linear:c2`, `static:ratio`, `static:sign`
    /// or `solver:<code>`.
    pub reason: String,
    pub pose: FingerPose,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateResult {
    pub lengths: LinkLengths,
    pub feasible: bool,
    pub violation: Option<Violation>,
    /// Grid mean (or minimum) of |tau| at F_A = 1 N; present iff feasible.
    pub score: Option<f64>,
}

/// Per-pose quantities used by the screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseCheck {
    pub l_x: f64,
    pub c_1: f64,
    pub c_2: f64,
    pub tau_1: f64,
    pub tau_2: f64,
}

fn first_linear_violation(c: &PoseCheck, cons: &ConstraintSpec) -> Option<(&'static str, f64)> {
    if c.l_x < 0.0 || c.l_x > cons.l_max {
        return Some(("linear:l_x", c.l_x));
    }
    if c.c_1 < 0.0 || c.c_1 > cons.c1_max {
        return Some(("linear:c1", c.c_1));
    }
    if c.c_2 < 0.0 || c.c_2 > cons.c2_max {
        return Some(("linear:c2", c.c_2));
    }
    None
}

fn static_violation(c: &PoseCheck, cons: &ConstraintSpec) -> Option<(&'static str, f64)> {
    let ratio = c.tau_1 / c.tau_2;
    if !(c.tau_1 * c.tau_2 > 0.0) {
        return Some(("static:sign", ratio));
    }
    if !(ratio >= cons.ratio_min && ratio <= cons.ratio_max) {
        return Some(("static:ratio", ratio));
    }
    None
}

/// Geometry for a candidate plus a consistent state at full extension.
pub fn prepare_candidate(
    base: &MechanismGeometry,
    base_extended: Option<&MechanismState>,
    lengths: LinkLengths,
    cons: &ConstraintSpec,
    opts: &SolveOptions,
) -> Result<(MechanismGeometry, MechanismState)> {
    let mut geom = base.with_lengths(lengths);
    let zero = FingerPose::new(0.0, 0.0);
    let state = match base_extended {
        Some(s) => match retarget(base, s, &geom, opts) {
            Ok(sol) => sol.state,
            Err(_) => bootstrap(&geom, &zero, opts)?,
        },
        None => bootstrap(&geom, &zero, opts)?,
    };
    let mut state = state;
    if cons.rezero_actuator {
        let shift = state.meas.l_x - cons.extension_stroke;
        geom.l_act += shift;
        state.meas.l_x -= shift;
        if geom.l_act <= 0.0 {
            return Err(Error::InvalidField { field: "l_act".into(), reason: "re-zeroed actuator length <= 0".into() });
        }
    }
    Ok((geom, state))
}

/// Scan the joint grid for one candidate, stopping at the first violation
/// unless `full` is set. Linear limits are checked before the static ratio
/// at every pose.
pub fn screen_with(
    geom: &MechanismGeometry,
    extended: &MechanismState,
    cons: &ConstraintSpec,
    opts: &SolveOptions,
    full: bool,
) -> (Option<Violation>, f64, f64, usize) {
    let grid = pose_grid(cons.q_o1_max_deg, cons.q_o2_max_deg, cons.step_deg);
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut count = 0usize;
    let mut first: Option<Violation> = None;
    let mut row_start = *extended;
    'rows: for (i, row) in grid.iter().enumerate() {
        let mut prev = row_start;
        for (j, pose) in row.iter().enumerate() {
            let sol: Result<Solution> = ik_from(geom, pose, &prev, opts);
            let sol = match sol {
                Ok(s) => s,
                Err(e) => {
                    let v = Violation { reason: format!("solver:{}", e.code()), pose: *pose, value: f64::NAN };
                    first.get_or_insert(v);
                    if full {
                        continue;
                    }
                    break 'rows;
                }
            };
            prev = sol.state;
            if j == 0 {
                row_start = sol.state;
            }
            let _ = i;
            let s = &sol.state;
            let mut check =
                PoseCheck { l_x: s.meas.l_x, c_1: s.passive.c_1, c_2: s.passive.c_2, tau_1: f64::NAN, tau_2: f64::NAN };
            if let Some((reason, value)) = first_linear_violation(&check, cons) {
                first.get_or_insert(Violation { reason: reason.into(), pose: *pose, value });
                if full {
                    continue;
                }
                break 'rows;
            }
            let tau = assemble_jacobian(geom, s).and_then(|jac| torques_from_actuator(&jac, 1.0));
            match tau {
                Ok(t) => {
                    check.tau_1 = t.tau_1;
                    check.tau_2 = t.tau_2;
                }
                Err(e) => {
                    first.get_or_insert(Violation { reason: format!("solver:{}", e.code()), pose: *pose, value: f64::NAN });
                    if full {
                        continue;
                    }
                    break 'rows;
                }
            }
            if let Some((reason, value)) = static_violation(&check, cons) {
                first.get_or_insert(Violation { reason: reason.into(), pose: *pose, value });
                if full {
                    continue;
                }
                break 'rows;
            }
            let p = check.tau_1.hypot(check.tau_2);
            sum += p;
            min = min.min(p);
            count += 1;
        }
    }
    (first, sum, min, count)
}

/// Feasibility of one candidate over the full joint grid.
pub fn screen_candidate(
    base: &MechanismGeometry,
    lengths: LinkLengths,
    cons: &ConstraintSpec,
    opts: &SolveOptions,
) -> CandidateResult {
    screen_prepared(base, None, lengths, cons, opts)
}

fn screen_prepared(
    base: &MechanismGeometry,
    base_extended: Option<&MechanismState>,
    lengths: LinkLengths,
    cons: &ConstraintSpec,
    opts: &SolveOptions,
) -> CandidateResult {
    let (geom, ext) = match prepare_candidate(base, base_extended, lengths, cons, opts) {
        Ok(x) => x,
        Err(e) => {
            return CandidateResult {
                lengths,
                feasible: false,
                violation: Some(Violation {
                    reason: format!("solver:{}", e.code()),
                    pose: FingerPose::default(),
                    value: f64::NAN,
                }),
                score: None,
            }
        }
    };
    let (violation, sum, min, count) = screen_with(&geom, &ext, cons, opts, false);
    let feasible = violation.is_none() && count > 0;
    let score = feasible.then(|| if cons.score_min { min } else { sum / count as f64 });
    CandidateResult { lengths, feasible, violation, score }
}

/// Screen every candidate and rank the feasible ones by descending score,
/// ties broken lexicographically on the lengths. Infeasible candidates
/// follow in lexicographic order. Output does not depend on `workers`.
pub fn exhaustive_search(
    space: &SearchSpace,
    cons: &ConstraintSpec,
    opts: &SolveOptions,
    workers: usize,
) -> Result<Vec<CandidateResult>> {
    space.validate()?;
    cons.validate()?;
    let candidates = space.candidates();
    let zero = FingerPose::new(0.0, 0.0);
    let base_ext = bootstrap(&space.base, &zero, opts).ok();
    let run = |l: &LinkLengths| screen_prepared(&space.base, base_ext.as_ref(), *l, cons, opts);
    let mut results: Vec<CandidateResult> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| candidates.par_iter().map(run).collect())
    } else {
        candidates.iter().map(run).collect()
    };
    results.sort_by(|a, b| {
        let sa = a.score.unwrap_or(f64::NEG_INFINITY);
        let sb = b.score.unwrap_or(f64::NEG_INFINITY);
        sb.total_cmp(&sa).then_with(|| {
            a.lengths.as_array().iter().zip(b.lengths.as_array()).fold(std::cmp::Ordering::Equal, |acc, (x, y)| {
                acc.then(x.total_cmp(&y))
            })
        })
    });
    Ok(results)
}

/// Counts of candidates removed at each stage of the screen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ScreeningStats {
    pub total: usize,
    pub linear: usize,
    pub static_: usize,
    pub solver: usize,
    pub feasible: usize,
}

pub fn screening_stats(results: &[CandidateResult]) -> ScreeningStats {
    let mut s = ScreeningStats { total: results.len(), ..Default::default() };
    for r in results {
        match &r.violation {
            None => s.feasible += 1,
            Some(v) if v.reason.starts_with("linear") => s.linear += 1,
            Some(v) if v.reason.starts_with("static") => s.static_ += 1,
            Some(_) => s.solver += 1,
        }
    }
    s
}

/// Normalised one-at-a-time sensitivity of an output S to an input E.
pub fn sensitivity_index(e1: f64, e2: f64, s1: f64, s2: f64) -> f64 {
    let s_av = 0.5 * (s1 + s2);
    let e_av = 0.5 * (e1 + e2);
    ((s2 - s1) / s_av) / ((e2 - e1) / e_av)
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Combined index over both sliders.
pub fn generic_index(si_c1: f64, si_c2: f64) -> f64 {
    signum0(si_c1) * signum0(si_c2) * si_c1.hypot(si_c2)
}

/// Anything that maps a named length to the two slider outputs.
pub trait SensitivityModel {
    fn variables(&self) -> Vec<&'static str>;
    fn baseline(&self, var: &str) -> f64;
    /// (c_1, c_2) with `var` set to `value`.
    fn outputs(&self, var: &str, value: f64) -> Result<(f64, f64)>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityEntry {
    pub variable: String,
    pub e1: f64,
    pub e2: f64,
    pub s1: (f64, f64),
    pub s2: (f64, f64),
    pub si_c1: f64,
    pub si_c2: f64,
    pub si_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub entries: Vec<SensitivityEntry>,
    /// Variables whose perturbed solve failed.
    pub missing: Vec<(String, String)>,
}

pub fn sensitivity_scan_model<M: SensitivityModel>(model: &M, perturbation: f64) -> SensitivityReport {
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for var in model.variables() {
        let l = model.baseline(var);
        let (e1, e2) = ((1.0 - perturbation) * l, (1.0 + perturbation) * l);
        match (model.outputs(var, e1), model.outputs(var, e2)) {
            (Ok(s1), Ok(s2)) => {
                let si_c1 = sensitivity_index(e1, e2, s1.0, s2.0);
                let si_c2 = sensitivity_index(e1, e2, s1.1, s2.1);
                entries.push(SensitivityEntry {
                    variable: var.to_string(),
                    e1,
                    e2,
                    s1,
                    s2,
                    si_c1,
                    si_c2,
                    si_g: generic_index(si_c1, si_c2),
                });
            }
            (Err(e), _) | (_, Err(e)) => missing.push((var.to_string(), e.code().to_string())),
        }
    }
    SensitivityReport { entries, missing }
}

/// The mechanism at a fixed pose, with lengths named as in the design tables.
pub struct MechanismModel {
    pub geom: MechanismGeometry,
    pub pose: FingerPose,
    pub opts: SolveOptions,
    state: MechanismState,
}

impl MechanismModel {
    pub fn new(geom: MechanismGeometry, pose: FingerPose, opts: SolveOptions) -> Result<Self> {
        let state = bootstrap(&geom, &pose, &opts)?;
        Ok(MechanismModel { geom, pose, opts, state })
    }

    pub const VARIABLES: [&'static str; 11] =
        ["l_EJ", "l_CI", "l_KH", "l_KB", "l_GH", "l_EF", "l_ED", "l_GF", "l_AB", "l_CD", "l_BC"];

    /// Geometry with one design variable changed, the others held.
    pub fn with_var(geom: &MechanismGeometry, var: &str, v: f64) -> MechanismGeometry {
        let mut g = geom.clone();
        match var {
            "l_EJ" => g.l_ej = v,
            "l_CI" => g.l_ci = v,
            "l_KH" => g.l_bh = v - g.l_bk,
            "l_KB" => {
                let kh = g.l_kh();
                g.l_bk = v;
                g.l_bh = kh - v;
            }
            "l_GH" => g.l_hg = v,
            "l_EF" => g.l_fd = g.l_de + v,
            "l_ED" => {
                let ef = g.l_ef();
                g.l_de = v;
                g.l_fd = v + ef;
            }
            "l_GF" => g.l_gf = v,
            "l_AB" => g.l_ab = v,
            "l_CD" => g.l_bd = g.l_bc - v,
            "l_BC" => {
                let cd = g.l_cd();
                g.l_bc = v;
                g.l_bd = v - cd;
            }
            other => panic!("unknown design variable {other}"),
        }
        g
    }

    pub fn value(geom: &MechanismGeometry, var: &str) -> f64 {
        match var {
            "l_EJ" => geom.l_ej,
            "l_CI" => geom.l_ci,
            "l_KH" => geom.l_kh(),
            "l_KB" => geom.l_bk,
            "l_GH" => geom.l_gh(),
            "l_EF" => geom.l_ef(),
            "l_ED" => geom.l_ed(),
            "l_GF" => geom.l_gf,
            "l_AB" => geom.l_ab,
            "l_CD" => geom.l_cd(),
            "l_BC" => geom.l_bc,
            other => panic!("unknown design variable {other}"),
        }
    }
}

impl SensitivityModel for MechanismModel {
    fn variables(&self) -> Vec<&'static str> {
        Self::VARIABLES.to_vec()
    }

    fn baseline(&self, var: &str) -> f64 {
        Self::value(&self.geom, var)
    }

    fn outputs(&self, var: &str, value: f64) -> Result<(f64, f64)> {
        let g = Self::with_var(&self.geom, var, value);
        g.validate()?;
        let sol = retarget(&self.geom, &self.state, &g, &self.opts)?;
        Ok((sol.state.passive.c_1, sol.state.passive.c_2))
    }
}

/// Sensitivity of the slider travels to every design length at `pose`.
pub fn sensitivity_scan(geom: &MechanismGeometry, pose: FingerPose, perturbation: f64) -> Result<SensitivityReport> {
    let model = MechanismModel::new(geom.clone(), pose, SolveOptions::unbounded())?;
    Ok(sensitivity_scan_model(&model, perturbation))
}
