//! Mechanism geometry, joint-state types and the four loop-closure residuals.
//!
//! Planar frame: origin at the MCP joint L, x along the extended proximal
//! phalanx (distal), y toward the palm, so flexion is a positive rotation.
//! Lengths in mm and angles in rad everywhere inside the crate.
//!
//! Point layout on the rigid bodies, as signed offsets along the body axis:
//!
//! * body B (axis `u(q_B)`, origin B): A at `-l_AB`, D at `l_BD`, C at `l_BC`, I at `l_BC + l_CI`
//! * body K (axis `u(q_K)`, origin B): K at `l_BK`, H at `-l_BH`, G at `-(l_BH + l_HG)`
//! * body D (axis `u(q_D)`, origin D): E at `l_DE`, F at `l_FD`, J at `l_DE + l_EJ`
//! * link GF along `u(q_G)`, actuator N to A along `u(q_N)` with length `l_act + l_x`
//! * sliders: I sits on the proximal phalanx at `c_1 u(q_o1)`, J on the middle
//!   phalanx at `M + c_2 u(q_o1 + q_o2)` with `M = l_LM u(q_o1)`

use std::collections::BTreeMap;

use nalgebra::{SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Residual = SVector<f64, 8>;

#[inline]
pub fn u(a: f64) -> Vector2<f64> {
    Vector2::new(a.cos(), a.sin())
}

/// Derivative of `u(a)` with respect to `a`.
#[inline]
pub fn du(a: f64) -> Vector2<f64> {
    Vector2::new(-a.sin(), a.cos())
}

/// Which of the two mirror closures a circle intersection picks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Left => 1.0,
            Branch::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Index,
    Middle,
    Ring,
    Little,
}

impl Finger {
    pub const ALL: [Finger; 4] = [Finger::Index, Finger::Middle, Finger::Ring, Finger::Little];

    pub fn name(self) -> &'static str {
        match self {
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Little => "little",
        }
    }

    pub fn parse(s: &str) -> Result<Finger> {
        match s.to_ascii_lowercase().as_str() {
            "index" => Ok(Finger::Index),
            "middle" => Ok(Finger::Middle),
            "ring" => Ok(Finger::Ring),
            "little" => Ok(Finger::Little),
            other => Err(Error::Config(format!("unknown finger '{other}'"))),
        }
    }
}

/// The six lengths varied by the link optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkLengths {
    pub l_ej: f64,
    pub l_ci: f64,
    pub l_cd: f64,
    pub l_ed: f64,
    pub l_ef: f64,
    pub l_bc: f64,
}

impl LinkLengths {
    pub const NAMES: [&'static str; 6] = ["l_EJ", "l_CI", "l_CD", "l_ED", "l_EF", "l_BC"];

    pub fn as_array(&self) -> [f64; 6] {
        [self.l_ej, self.l_ci, self.l_cd, self.l_ed, self.l_ef, self.l_bc]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        LinkLengths { l_ej: a[0], l_ci: a[1], l_cd: a[2], l_ed: a[3], l_ef: a[4], l_bc: a[5] }
    }

    /// Optimized lengths reported for each finger.
    pub fn optimum(finger: Finger) -> Self {
        let a = match finger {
            Finger::Index => [39.0, 16.0, 9.0, 40.0, 27.0, 43.0],
            Finger::Middle => [39.0, 17.0, 9.0, 52.0, 21.0, 41.0],
            Finger::Ring => [39.0, 16.0, 10.0, 38.0, 29.0, 42.0],
            Finger::Little => [42.0, 16.0, 9.0, 32.0, 23.0, 43.0],
        };
        Self::from_array(a)
    }
}

/// Constant link lengths of one finger component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismGeometry {
    pub l_ab: f64,
    pub l_bk: f64,
    pub l_bc: f64,
    pub l_ci: f64,
    pub l_bd: f64,
    pub l_de: f64,
    pub l_ej: f64,
    pub l_bh: f64,
    pub l_hg: f64,
    pub l_gf: f64,
    pub l_fd: f64,
    pub l_kn: f64,
    pub l_lk: f64,
    pub l_act: f64,
    pub q_kn: f64,
    pub q_lk: f64,
    /// Proximal phalanx length (MCP to PIP).
    pub l_lm: f64,
    pub actuator_branch: Branch,
    pub coupler_branch: Branch,
}

/// Base-frame defaults shared by all presets, chosen so that the extended
/// pose sits about 1 mm above the stroke minimum on the index preset.
pub mod base_defaults {
    pub const L_LK: f64 = 83.5210952061173;
    pub const Q_LK_DEG: f64 = -115.47574100715138;
    pub const L_KN: f64 = 281.5621209223989;
    pub const Q_KN_DEG: f64 = -71.34163124899797;
    pub const L_ACT: f64 = 287.3424385656191;
    /// Index web-to-PIP length from the anthropometric table.
    pub const L_LM: f64 = 55.3;
}

impl MechanismGeometry {
    /// Preset for a finger: optimized lengths, the shared constants and the
    /// default base frame.
    pub fn preset(finger: Finger) -> Self {
        Self::from_lengths(LinkLengths::optimum(finger))
    }

    pub fn index() -> Self {
        Self::preset(Finger::Index)
    }

    /// Shared constants (KH 72, KB 35, GH 86, AB 18, GF 46) with the given
    /// varied lengths and the default base frame.
    pub fn from_lengths(l: LinkLengths) -> Self {
        use base_defaults::*;
        let l_kh = 72.0;
        let l_bk = 35.0;
        MechanismGeometry {
            l_ab: 18.0,
            l_bk,
            l_bc: l.l_bc,
            l_ci: l.l_ci,
            l_bd: l.l_bc - l.l_cd,
            l_de: l.l_ed,
            l_ej: l.l_ej,
            l_bh: l_kh - l_bk,
            l_hg: 86.0,
            l_gf: 46.0,
            l_fd: l.l_ed + l.l_ef,
            l_kn: L_KN,
            l_lk: L_LK,
            l_act: L_ACT,
            q_kn: Q_KN_DEG.to_radians(),
            q_lk: Q_LK_DEG.to_radians(),
            l_lm: L_LM,
            actuator_branch: Branch::Right,
            coupler_branch: Branch::Right,
        }
    }

    pub fn with_lengths(&self, l: LinkLengths) -> Self {
        let mut g = self.clone();
        g.l_bc = l.l_bc;
        g.l_ci = l.l_ci;
        g.l_bd = l.l_bc - l.l_cd;
        g.l_de = l.l_ed;
        g.l_ej = l.l_ej;
        g.l_fd = l.l_ed + l.l_ef;
        g
    }

    pub fn lengths(&self) -> LinkLengths {
        LinkLengths {
            l_ej: self.l_ej,
            l_ci: self.l_ci,
            l_cd: self.l_cd(),
            l_ed: self.l_ed(),
            l_ef: self.l_ef(),
            l_bc: self.l_bc,
        }
    }

    pub fn l_ad(&self) -> f64 {
        self.l_ab + self.l_bd
    }
    pub fn l_cd(&self) -> f64 {
        self.l_bc - self.l_bd
    }
    pub fn l_ed(&self) -> f64 {
        self.l_de
    }
    pub fn l_ef(&self) -> f64 {
        self.l_fd - self.l_de
    }
    pub fn l_gh(&self) -> f64 {
        self.l_hg
    }
    pub fn l_kh(&self) -> f64 {
        self.l_bk + self.l_bh
    }
    pub fn l_gk(&self) -> f64 {
        self.l_bk + self.l_bh + self.l_hg
    }
    pub fn l_df(&self) -> f64 {
        self.l_fd
    }
    /// Offset of I from B along body B.
    pub fn s_i(&self) -> f64 {
        self.l_bc + self.l_ci
    }
    /// Offset of G from B along body K (negative: opposite side from K).
    pub fn s_g(&self) -> f64 {
        -(self.l_bh + self.l_hg)
    }
    /// Offset of J from D along body D.
    pub fn s_j(&self) -> f64 {
        self.l_de + self.l_ej
    }

    /// Ground pivot K.
    pub fn point_k(&self) -> Vector2<f64> {
        self.l_lk * u(self.q_lk)
    }

    /// Ground pivot N of the actuator housing.
    pub fn point_n(&self) -> Vector2<f64> {
        self.point_k() + self.l_kn * u(self.q_kn)
    }

    /// Named lengths for validation and logging.
    pub fn named_lengths(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("l_AB", self.l_ab),
            ("l_BK", self.l_bk),
            ("l_BC", self.l_bc),
            ("l_CI", self.l_ci),
            ("l_BD", self.l_bd),
            ("l_DE", self.l_de),
            ("l_EJ", self.l_ej),
            ("l_BH", self.l_bh),
            ("l_HG", self.l_hg),
            ("l_GF", self.l_gf),
            ("l_FD", self.l_fd),
            ("l_KN", self.l_kn),
            ("l_LK", self.l_lk),
            ("l_act", self.l_act),
            ("l_LM", self.l_lm),
        ]
    }

    /// Every length strictly positive and the derived aliases meaningful.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named_lengths() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidField { field: name.into(), reason: format!("must be > 0, got {v}") });
            }
        }
        for (name, v) in [("q_KN", self.q_kn), ("q_LK", self.q_lk)] {
            if !v.is_finite() {
                return Err(Error::InvalidField { field: name.into(), reason: "not finite".into() });
            }
        }
        if self.l_cd() <= 0.0 {
            return Err(Error::InvalidField {
                field: "l_CD".into(),
                reason: format!("l_BC - l_BD must be > 0, got {}", self.l_cd()),
            });
        }
        if self.l_ef() <= 0.0 {
            return Err(Error::InvalidField {
                field: "l_EF".into(),
                reason: format!("l_FD - l_DE must be > 0, got {}", self.l_ef()),
            });
        }
        Ok(())
    }

    /// Stable textual fingerprint of all parameters (used for output headers).
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.named_lengths() {
            s.push_str(&format!("{name}={v:.12e};"));
        }
        s.push_str(&format!(
            "q_KN={:.12e};q_LK={:.12e};branches={:?}/{:?}",
            self.q_kn, self.q_lk, self.actuator_branch, self.coupler_branch
        ));
        s
    }
}

/// Finger joint angles (MCP, PIP).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FingerPose {
    pub q_o1: f64,
    pub q_o2: f64,
}

impl FingerPose {
    pub fn new(q_o1: f64, q_o2: f64) -> Self {
        FingerPose { q_o1, q_o2 }
    }

    pub fn from_deg(q_o1: f64, q_o2: f64) -> Self {
        FingerPose { q_o1: q_o1.to_radians(), q_o2: q_o2.to_radians() }
    }

    pub fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.q_o1, self.q_o2)
    }
}

/// Actuator stroke and the instrumented joint angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasuredState {
    pub l_x: f64,
    pub q_b: f64,
}

impl MeasuredState {
    pub const STROKE_MAX: f64 = 50.0;

    pub fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.l_x, self.q_b)
    }

    /// Sensor ranges: stroke in [0, 50] mm, q_B in [0, 330 deg] modulo a turn.
    pub fn check_ranges(&self) -> Result<()> {
        if !(0.0..=Self::STROKE_MAX).contains(&self.l_x) {
            return Err(Error::Precondition(format!("l_x = {} mm outside [0, 50]", self.l_x)));
        }
        let qb = self.q_b.rem_euclid(std::f64::consts::TAU).to_degrees();
        if qb > 330.0 {
            return Err(Error::Precondition(format!("q_B = {qb:.3} deg outside the sensor range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PassiveState {
    pub q_k: f64,
    pub q_d: f64,
    pub q_g: f64,
    pub q_n: f64,
    pub c_1: f64,
    pub c_2: f64,
}

/// Full joint state: finger, measured and passive variables.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MechanismState {
    pub pose: FingerPose,
    pub meas: MeasuredState,
    pub passive: PassiveState,
}

impl MechanismState {
    /// All ten variables in the order
    /// `q_o1, q_o2, l_x, q_B, q_K, q_D, q_G, q_N, c_1, c_2`.
    pub fn to_array(&self) -> [f64; 10] {
        let p = &self.passive;
        [self.pose.q_o1, self.pose.q_o2, self.meas.l_x, self.meas.q_b, p.q_k, p.q_d, p.q_g, p.q_n, p.c_1, p.c_2]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        MechanismState {
            pose: FingerPose::new(a[0], a[1]),
            meas: MeasuredState { l_x: a[2], q_b: a[3] },
            passive: PassiveState { q_k: a[4], q_d: a[5], q_g: a[6], q_n: a[7], c_1: a[8], c_2: a[9] },
        }
    }
}

/// Positions of the named points for a given state (B is taken from loop 1
/// as seen from K).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Points {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub d: Vector2<f64>,
    pub f: Vector2<f64>,
    pub g: Vector2<f64>,
    pub i: Vector2<f64>,
    pub j: Vector2<f64>,
    pub k: Vector2<f64>,
    pub m: Vector2<f64>,
    pub n: Vector2<f64>,
}

pub fn points(geom: &MechanismGeometry, s: &MechanismState) -> Points {
    let p = &s.passive;
    let k = geom.point_k();
    let n = geom.point_n();
    let b = k - geom.l_bk * u(p.q_k);
    let a = b - geom.l_ab * u(s.meas.q_b);
    let d = b + geom.l_bd * u(s.meas.q_b);
    let g = b + geom.s_g() * u(p.q_k);
    let f = d + geom.l_fd * u(p.q_d);
    let i = b + geom.s_i() * u(s.meas.q_b);
    let j = d + geom.s_j() * u(p.q_d);
    let m = geom.l_lm * u(s.pose.q_o1);
    Points { a, b, d, f, g, i, j, k, m, n }
}

/// X and Y components of the four vector loops, in mm.
///
/// * loop 1, K-N-A-B-K: `l_KN u(q_KN) + (l_act + l_x) u(q_N) + l_AB u(q_B) + l_BK u(q_K)`
/// * loop 2, L-K-B-I-L: `l_LK u(q_LK) - l_BK u(q_K) + (l_BC + l_CI) u(q_B) - c_1 u(q_o1)`
/// * loop 3, L-K-B-D-J-M-L: `l_LK u(q_LK) - l_BK u(q_K) + l_BD u(q_B) + (l_DE + l_EJ) u(q_D)
///   - c_2 u(q_o1 + q_o2) - l_LM u(q_o1)`
/// * loop 4, B-H-G-F-D-B: `-(l_BH + l_HG) u(q_K) + l_GF u(q_G) - l_FD u(q_D) - l_BD u(q_B)`
pub fn loop_residuals(
    geom: &MechanismGeometry,
    pose: &FingerPose,
    meas: &MeasuredState,
    passive: &PassiveState,
) -> Residual {
    let p = passive;
    let ub = u(meas.q_b);
    let uk = u(p.q_k);
    let ud = u(p.q_d);
    let lk = geom.point_k();
    let r1 = geom.l_kn * u(geom.q_kn) + (geom.l_act + meas.l_x) * u(p.q_n) + geom.l_ab * ub + geom.l_bk * uk;
    let r2 = lk - geom.l_bk * uk + geom.s_i() * ub - p.c_1 * u(pose.q_o1);
    let r3 = lk - geom.l_bk * uk + geom.l_bd * ub + geom.s_j() * ud
        - p.c_2 * u(pose.q_o1 + pose.q_o2)
        - geom.l_lm * u(pose.q_o1);
    let r4 = geom.s_g() * uk + geom.l_gf * u(p.q_g) - geom.l_fd * ud - geom.l_bd * ub;
    Residual::from_column_slice(&[r1.x, r1.y, r2.x, r2.y, r3.x, r3.y, r4.x, r4.y])
}

pub fn state_residuals(geom: &MechanismGeometry, s: &MechanismState) -> Residual {
    loop_residuals(geom, &s.pose, &s.meas, &s.passive)
}

/// Partial derivatives of the eight residuals with respect to the ten
/// variables, columns ordered as in [`MechanismState::to_array`].
pub fn residual_partials(geom: &MechanismGeometry, s: &MechanismState) -> nalgebra::SMatrix<f64, 8, 10> {
    let p = &s.passive;
    let qb = s.meas.q_b;
    let q12 = s.pose.q_o1 + s.pose.q_o2;
    let mut j = nalgebra::SMatrix::<f64, 8, 10>::zeros();
    let mut set = |loop_idx: usize, col: usize, v: Vector2<f64>| {
        j[(2 * loop_idx, col)] = v.x;
        j[(2 * loop_idx + 1, col)] = v.y;
    };
    // loop 1
    set(0, 2, u(p.q_n));
    set(0, 3, geom.l_ab * du(qb));
    set(0, 4, geom.l_bk * du(p.q_k));
    set(0, 7, (geom.l_act + s.meas.l_x) * du(p.q_n));
    // loop 2
    set(1, 0, -p.c_1 * du(s.pose.q_o1));
    set(1, 3, geom.s_i() * du(qb));
    set(1, 4, -geom.l_bk * du(p.q_k));
    set(1, 8, -u(s.pose.q_o1));
    // loop 3
    set(2, 0, -p.c_2 * du(q12) - geom.l_lm * du(s.pose.q_o1));
    set(2, 1, -p.c_2 * du(q12));
    set(2, 3, geom.l_bd * du(qb));
    set(2, 4, -geom.l_bk * du(p.q_k));
    set(2, 5, geom.s_j() * du(p.q_d));
    set(2, 9, -u(q12));
    // loop 4
    set(3, 3, -geom.l_bd * du(qb));
    set(3, 4, geom.s_g() * du(p.q_k));
    set(3, 5, -geom.l_fd * du(p.q_d));
    set(3, 6, geom.l_gf * du(p.q_g));
    j
}

/// Joint box over which poses count as natural.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RomBox {
    pub q_o1_max: f64,
    pub q_o2_max: f64,
}

impl Default for RomBox {
    fn default() -> Self {
        RomBox { q_o1_max: 80f64.to_radians(), q_o2_max: 90f64.to_radians() }
    }
}

impl RomBox {
    pub fn contains(&self, pose: &FingerPose, margin: f64) -> bool {
        pose.q_o1 >= -margin
            && pose.q_o1 <= self.q_o1_max + margin
            && pose.q_o2 >= -margin
            && pose.q_o2 <= self.q_o2_max + margin
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GeometryDoc {
    preset: Option<String>,
    #[serde(default)]
    links: BTreeMap<String, f64>,
    #[serde(default)]
    base: BTreeMap<String, toml::Value>,
    #[serde(default)]
    finger: BTreeMap<String, f64>,
}

fn link_slot<'a>(g: &'a mut MechanismGeometry, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "l_AB" => &mut g.l_ab,
        "l_BK" | "l_KB" => &mut g.l_bk,
        "l_BC" => &mut g.l_bc,
        "l_CI" => &mut g.l_ci,
        "l_BD" => &mut g.l_bd,
        "l_DE" | "l_ED" => &mut g.l_de,
        "l_EJ" => &mut g.l_ej,
        "l_BH" => &mut g.l_bh,
        "l_HG" | "l_GH" => &mut g.l_hg,
        "l_GF" => &mut g.l_gf,
        "l_FD" | "l_DF" => &mut g.l_fd,
        _ => return None,
    })
}

/// Parse a geometry document.
///
/// ```toml
/// preset = "index"          # optional, defaults to index
/// [links]                   # mm; l_CD, l_EF and l_KH are applied after the direct keys
/// l_EJ = 39.0
/// l_CD = 9.0
/// [base]                    # mm and degrees
/// l_LK = 60.0
/// q_LK_deg = -120.0
/// actuator_branch = "right"
/// [finger]
/// l_LM = 50.0
/// ```
pub fn load_geometry(doc: &str) -> Result<MechanismGeometry> {
    let d: GeometryDoc = toml::from_str(doc).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
    let finger = match &d.preset {
        Some(p) => Finger::parse(p)?,
        None => Finger::Index,
    };
    let mut g = MechanismGeometry::preset(finger);
    let mut relative: Vec<(&str, f64)> = Vec::new();
    for (k, &v) in &d.links {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidField { field: k.clone(), reason: format!("must be > 0, got {v}") });
        }
        match k.as_str() {
            "l_CD" | "l_EF" | "l_KH" => relative.push((leak_key(k), v)),
            _ => match link_slot(&mut g, k) {
                Some(slot) => *slot = v,
                None => return Err(Error::InvalidField { field: k.clone(), reason: "unknown link".into() }),
            },
        }
    }
    for (k, v) in relative {
        match k {
            "l_CD" => g.l_bd = g.l_bc - v,
            "l_EF" => g.l_fd = g.l_de + v,
            _ => g.l_bh = v - g.l_bk,
        }
    }
    for (k, v) in &d.base {
        let num = || -> Result<f64> {
            v.as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::InvalidField { field: k.clone(), reason: "expected a number".into() })
        };
        match k.as_str() {
            "l_LK" => g.l_lk = num()?,
            "l_KN" => g.l_kn = num()?,
            "l_act" => g.l_act = num()?,
            "q_LK_deg" => g.q_lk = num()?.to_radians(),
            "q_KN_deg" => g.q_kn = num()?.to_radians(),
            "actuator_branch" | "coupler_branch" => {
                let b = match v.as_str() {
                    Some("left") => Branch::Left,
                    Some("right") => Branch::Right,
                    _ => return Err(Error::InvalidField { field: k.clone(), reason: "expected 'left' or 'right'".into() }),
                };
                if k == "actuator_branch" {
                    g.actuator_branch = b;
                } else {
                    g.coupler_branch = b;
                }
            }
            _ => return Err(Error::InvalidField { field: k.clone(), reason: "unknown base key".into() }),
        }
    }
    for (k, &v) in &d.finger {
        match k.as_str() {
            "l_LM" | "l_ML" => g.l_lm = v,
            _ => return Err(Error::InvalidField { field: k.clone(), reason: "unknown finger key".into() }),
        }
    }
    g.validate()?;
    Ok(g)
}

fn leak_key(k: &str) -> &'static str {
    match k {
        "l_CD" => "l_CD",
        "l_EF" => "l_EF",
        _ => "l_KH",
    }
}

/// Effective values as a geometry document (degrees for angles).
pub fn geometry_to_doc(g: &MechanismGeometry) -> String {
    let br = |b: Branch| if b == Branch::Left { "left" } else { "right" };
    let mut s = String::from("[links]\n");
    for (name, v) in g.named_lengths() {
        if matches!(name, "l_KN" | "l_LK" | "l_act" | "l_LM") {
            continue;
        }
        s.push_str(&format!("{name} = {v}\n"));
    }
    s.push_str("\n[base]\n");
    s.push_str(&format!("l_LK = {}\nq_LK_deg = {}\n", g.l_lk, g.q_lk.to_degrees()));
    s.push_str(&format!("l_KN = {}\nq_KN_deg = {}\n", g.l_kn, g.q_kn.to_degrees()));
    s.push_str(&format!("l_act = {}\n", g.l_act));
    s.push_str(&format!(
        "actuator_branch = \"{}\"\ncoupler_branch = \"{}\"\n",
        br(g.actuator_branch),
        br(g.coupler_branch)
    ));
    s.push_str(&format!("\n[finger]\nl_LM = {}\n", g.l_lm));
    s
}

/// One row of the anthropometric table.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct FingerAnthropometry {
    pub finger: Finger,
    pub web: f64,
    pub proximal: f64,
    pub proximal_sd: f64,
    pub middle: f64,
    pub middle_sd: f64,
    pub distal: f64,
    pub distal_sd: f64,
    pub mcp_rom: f64,
    pub mcp_rom_sd: f64,
    pub pip_rom: f64,
    pub pip_rom_sd: f64,
    pub dip_rom: f64,
    pub dip_rom_sd: f64,
}

pub const ANTHROPOMETRIC_CSV: &str = include_str!("../data/anthropometric.csv");

/// Average finger sizes (mm) and ranges of motion (deg), read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct AnthropometricTable {
    pub version: String,
    pub rows: Vec<FingerAnthropometry>,
}

impl AnthropometricTable {
    pub fn embedded() -> Self {
        Self::parse(ANTHROPOMETRIC_CSV).expect("embedded anthropometric table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = String::new();
        let body: String = text
            .lines()
            .filter(|l| {
                if let Some(v) = l.strip_prefix("# version:") {
                    version = v.trim().to_string();
                }
                !l.starts_with('#')
            })
            .collect::<Vec<_>>()
            .join("\n");
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize().enumerate() {
            let row: FingerAnthropometry = rec.map_err(|e| Error::Parse { row: i + 2, reason: e.to_string() })?;
            rows.push(row);
        }
        Ok(AnthropometricTable { version, rows })
    }

    pub fn get(&self, finger: Finger) -> &FingerAnthropometry {
        self.rows.iter().find(|r| r.finger == finger).expect("all four fingers present")
    }
}
