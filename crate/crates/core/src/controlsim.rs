//! Actuator plant and controllers for one finger module.
//!
//! The plant is a simulation stand-in: velocity is zero inside the PWM dead
//! zone and grows linearly to the rated maximum at 100 % duty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STROKE_MAX: f64 = 50.0;
pub const V_MAX: f64 = 32.0;
pub const DEAD_ZONE: f64 = 37.2;
/// Constant PWM support added outside the deadband.
pub const F_THR: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorPlant {
    pub stroke_max: f64,
    pub v_max: f64,
    pub dead_zone: f64,
    pub position: f64,
}

impl Default for ActuatorPlant {
    fn default() -> Self {
        ActuatorPlant { stroke_max: STROKE_MAX, v_max: V_MAX, dead_zone: DEAD_ZONE, position: 0.0 }
    }
}

impl ActuatorPlant {
    pub fn at(position: f64) -> Self {
        ActuatorPlant { position: position.clamp(0.0, STROKE_MAX), ..Default::default() }
    }

    /// Commanded velocity in mm/s for a duty cycle in percent.
    pub fn velocity(&self, pwm: f64) -> f64 {
        let pwm = pwm.clamp(-100.0, 100.0);
        if pwm.abs() <= self.dead_zone {
            0.0
        } else {
            pwm.signum() * self.v_max * (pwm.abs() - self.dead_zone) / (100.0 - self.dead_zone)
        }
    }

    pub fn step(&mut self, pwm: f64, dt: f64) -> f64 {
        debug_assert!(dt > 0.0);
        self.position = (self.position + self.velocity(pwm) * dt).clamp(0.0, self.stroke_max);
        self.position
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub k_p: f64,
    pub k_i: f64,
    /// Bound on |K_I * integral| in PWM percent.
    pub integral_clamp: f64,
    /// Feed-forward weight on the desired actuator force (rendering only).
    pub k_w: f64,
}

impl ControllerGains {
    /// Position loop, PWM % per mm. Tuned so that a 25 mm step settles
    /// inside 2 mm well before 3 s and a 10 mm/s ramp lags by under 2 mm.
    pub const POSITION: ControllerGains = ControllerGains { k_p: 10.0, k_i: 2.0, integral_clamp: 100.0, k_w: 0.0 };
    /// Force loop, PWM % per N.
    pub const FORCE: ControllerGains = ControllerGains { k_p: 8.0, k_i: 4.0, integral_clamp: 100.0, k_w: 0.5 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_p", self.k_p), ("k_i", self.k_i), ("integral_clamp", self.integral_clamp)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidField { field: name.into(), reason: "must be >= 0".into() });
            }
        }
        Ok(())
    }
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self::POSITION
    }
}

/// PI state with the integral term clamped in output units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PiState {
    pub integral: f64,
}

impl PiState {
    fn update(&mut self, gains: &ControllerGains, e: f64, dt: f64) -> f64 {
        self.integral += e * dt;
        if gains.k_i > 0.0 {
            let lim = gains.integral_clamp / gains.k_i;
            self.integral = self.integral.clamp(-lim, lim);
        }
        gains.k_i * self.integral
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlTick {
    pub t: f64,
    pub reference: f64,
    pub measurement: f64,
    pub error: f64,
    pub f_thr: f64,
    pub f_cont: f64,
    /// Controller output before the temperature filter.
    pub f_pwm_raw: f64,
    pub f_pwm: f64,
    pub limit: f64,
    pub position: f64,
}

impl ControlTick {
    pub const HEADER: [&'static str; 9] = ["t", "ref", "meas", "e", "F_thr", "F_cont", "F_PWM", "limit", "pos"];

    pub fn record(&self) -> [f64; 9] {
        [
            self.t,
            self.reference,
            self.measurement,
            self.error,
            self.f_thr,
            self.f_cont,
            self.f_pwm,
            self.limit,
            self.position,
        ]
    }
}

/// Output of one controller evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Command {
    pub f_thr: f64,
    pub f_cont: f64,
    pub f_pwm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositionController {
    pub gains: ControllerGains,
    pub f_thr: f64,
    /// Below this error magnitude (mm) the support term is off.
    pub deadband: f64,
    pub pi: PiState,
}

impl Default for PositionController {
    fn default() -> Self {
        PositionController { gains: ControllerGains::POSITION, f_thr: F_THR, deadband: 0.2, pi: PiState::default() }
    }
}

impl PositionController {
    pub fn new(gains: ControllerGains) -> Self {
        PositionController { gains, ..Default::default() }
    }

    pub fn tick(&mut self, reference: f64, measured: f64, dt: f64) -> Command {
        let e = reference - measured;
        let f_thr = if e.abs() < self.deadband { 0.0 } else { e.signum() * self.f_thr };
        let f_cont = self.gains.k_p * e + self.pi.update(&self.gains, e, dt);
        Command { f_thr, f_cont, f_pwm: (f_thr + f_cont).clamp(-100.0, 100.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureFilter {
    pub pwm_min: f64,
    pub pwm_max: f64,
    /// Limit decrease in %/s while saturated.
    pub decay: f64,
    /// Limit increase in %/s while demand is below `pwm_min`.
    pub recovery: f64,
    pub limit: f64,
}

impl Default for TemperatureFilter {
    fn default() -> Self {
        TemperatureFilter { pwm_min: 60.0, pwm_max: 90.0, decay: 30.0, recovery: 15.0, limit: 90.0 }
    }
}

impl TemperatureFilter {
    pub fn validate(&self) -> Result<()> {
        if !(self.pwm_min > 0.0 && self.pwm_min <= self.pwm_max && self.pwm_max <= 100.0) {
            return Err(Error::InvalidField { field: "pwm_min".into(), reason: "need 0 < pwm_min <= pwm_max <= 100".into() });
        }
        if !(self.decay >= 0.0 && self.recovery >= 0.0) {
            return Err(Error::InvalidField { field: "decay".into(), reason: "rates must be >= 0".into() });
        }
        Ok(())
    }

    pub fn tick(&mut self, pwm_in: f64, dt: f64) -> f64 {
        let mag = pwm_in.abs();
        if mag < self.pwm_min {
            self.limit = (self.limit + self.recovery * dt).min(self.pwm_max);
            pwm_in
        } else if mag >= self.limit {
            self.limit = (self.limit - self.decay * dt).max(self.pwm_min);
            pwm_in.signum() * self.limit
        } else {
            pwm_in
        }
    }
}

/// Force loop. In both modes forces are measured along the stroke, positive
/// towards flexion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForceController {
    pub gains: ControllerGains,
    pub f_thr: f64,
    /// Below this error magnitude (N) the support term is off.
    pub deadband: f64,
    pub pi: PiState,
}

impl Default for ForceController {
    fn default() -> Self {
        ForceController { gains: ControllerGains::FORCE, f_thr: F_THR, deadband: 0.1, pi: PiState::default() }
    }
}

impl ForceController {
    pub fn new(gains: ControllerGains) -> Self {
        ForceController { gains, ..Default::default() }
    }

    /// With `f_desired == 0` the measured user force is the only reference
    /// and the actuator follows it. Otherwise the error F_a - F_m drives the
    /// PI loop on top of the weighted desired force.
    pub fn tick(&mut self, f_desired: f64, f_measured: f64, dt: f64) -> Command {
        let (e, ff) = if f_desired == 0.0 { (f_measured, 0.0) } else { (f_desired - f_measured, self.gains.k_w * f_desired) };
        let f_cont = ff + self.gains.k_p * e + self.pi.update(&self.gains, e, dt);
        let f_thr = if e.abs() < self.deadband || f_cont == 0.0 { 0.0 } else { f_cont.signum() * self.f_thr };
        Command { f_thr, f_cont, f_pwm: (f_thr + f_cont).clamp(-100.0, 100.0) }
    }
}

/// Reference trajectory for the position loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Reference {
    Step { from: f64, to: f64, at: f64 },
    /// Starts at `from` and moves at `rate` mm/s after `at`, holding at `to`.
    Ramp { from: f64, to: f64, rate: f64, at: f64 },
    /// Piecewise-linear samples (t, value).
    Samples { points: Vec<(f64, f64)> },
}

impl Reference {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Reference::Step { from, to, at } => {
                if t < *at {
                    *from
                } else {
                    *to
                }
            }
            Reference::Ramp { from, to, rate, at } => {
                let d = (t - at).max(0.0) * rate.abs();
                if to >= from {
                    (from + d).min(*to)
                } else {
                    (from - d).max(*to)
                }
            }
            Reference::Samples { points } => interpolate(points, t),
        }
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    match points {
        [] => 0.0,
        [(_, v)] => *v,
        _ => {
            if t <= points[0].0 {
                return points[0].1;
            }
            let k = points.partition_point(|p| p.0 <= t);
            if k >= points.len() {
                return points[points.len() - 1].1;
            }
            let (t0, v0) = points[k - 1];
            let (t1, v1) = points[k];
            if t1 == t0 {
                v1
            } else {
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionScenario {
    pub gains: ControllerGains,
    pub filter: Option<TemperatureFilter>,
    pub duration: f64,
    pub dt: f64,
    pub initial: f64,
    pub deadband: f64,
}

impl Default for PositionScenario {
    fn default() -> Self {
        PositionScenario {
            gains: ControllerGains::POSITION,
            filter: Some(TemperatureFilter::default()),
            duration: 5.0,
            dt: 1e-3,
            initial: 0.0,
            deadband: 0.2,
        }
    }
}

impl PositionScenario {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidField { field: "dt".into(), reason: "must be > 0".into() });
        }
        if !(self.duration >= 0.0) {
            return Err(Error::InvalidField { field: "duration".into(), reason: "must be >= 0".into() });
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Closed-loop position tracking of `reference`.
pub fn simulate_position(sc: &PositionScenario, reference: &Reference) -> Result<Vec<ControlTick>> {
    sc.validate()?;
    let mut plant = ActuatorPlant::at(sc.initial);
    let mut ctrl = PositionController { deadband: sc.deadband, ..PositionController::new(sc.gains) };
    let mut filter = sc.filter;
    let mut log = Vec::with_capacity(sc.steps() + 1);
    for k in 0..=sc.steps() {
        let t = k as f64 * sc.dt;
        let r = reference.value(t);
        let meas = plant.position;
        let cmd = ctrl.tick(r, meas, sc.dt);
        let (out, limit) = match filter.as_mut() {
            Some(f) => (f.tick(cmd.f_pwm, sc.dt), f.limit),
            None => (cmd.f_pwm, 100.0),
        };
        let pos = plant.step(out, sc.dt);
        log.push(ControlTick {
            t,
            reference: r,
            measurement: meas,
            error: r - meas,
            f_thr: cmd.f_thr,
            f_cont: cmd.f_cont,
            f_pwm_raw: cmd.f_pwm,
            f_pwm: out,
            limit,
            position: pos,
        });
    }
    Ok(log)
}

/// First time after which |error| stays within `tol`, if any.
pub fn settling_time(log: &[ControlTick], tol: f64) -> Option<f64> {
    let last_out = log.iter().rposition(|t| (t.reference - t.position).abs() > tol);
    match last_out {
        None => log.first().map(|t| t.t),
        Some(i) if i + 1 < log.len() => Some(log[i + 1].t),
        Some(_) => None,
    }
}

/// Simulated hand coupled to the device through a spring of stiffness
/// `k_user` (N/mm). The hand rests at `x_user(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceScenario {
    pub gains: ControllerGains,
    pub filter: Option<TemperatureFilter>,
    pub duration: f64,
    pub dt: f64,
    pub initial: f64,
    pub k_user: f64,
    /// Desired force on the user; 0 selects the backdrive mode.
    pub f_desired: f64,
    pub user: Reference,
}

impl Default for ForceScenario {
    fn default() -> Self {
        ForceScenario {
            gains: ControllerGains::FORCE,
            filter: Some(TemperatureFilter::default()),
            duration: 3.0,
            dt: 1e-3,
            initial: 10.0,
            k_user: 0.5,
            f_desired: 0.0,
            user: Reference::Step { from: 10.0, to: 30.0, at: 0.5 },
        }
    }
}

/// Force-loop simulation. In backdrive mode F_m is what the hand pushes
/// towards flexion, k (x_user - pos); in rendering mode F_m is what the
/// device pushes on the hand, k (pos - x_user). The tick log reuses the
/// position columns: `ref` is the desired force, `meas` the measured one.
pub fn simulate_force(sc: &ForceScenario) -> Result<Vec<ControlTick>> {
    sc.gains.validate()?;
    if !(sc.dt > 0.0) {
        return Err(Error::InvalidField { field: "dt".into(), reason: "must be > 0".into() });
    }
    let mut plant = ActuatorPlant::at(sc.initial);
    let mut ctrl = ForceController::new(sc.gains);
    let mut filter = sc.filter;
    let steps = (sc.duration / sc.dt).round() as usize;
    let mut log = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * sc.dt;
        let x_u = sc.user.value(t);
        let f_m = if sc.f_desired == 0.0 { sc.k_user * (x_u - plant.position) } else { sc.k_user * (plant.position - x_u) };
        let cmd = ctrl.tick(sc.f_desired, f_m, sc.dt);
        let (out, limit) = match filter.as_mut() {
            Some(f) => (f.tick(cmd.f_pwm, sc.dt), f.limit),
            None => (cmd.f_pwm, 100.0),
        };
        let pos = plant.step(out, sc.dt);
        log.push(ControlTick {
            t,
            reference: sc.f_desired,
            measurement: f_m,
            error: if sc.f_desired == 0.0 { f_m } else { sc.f_desired - f_m },
            f_thr: cmd.f_thr,
            f_cont: cmd.f_cont,
            f_pwm_raw: cmd.f_pwm,
            f_pwm: out,
            limit,
            position: pos,
        });
    }
    Ok(log)
}

/// Independent finger loops advanced in parallel; output order follows input.
pub fn simulate_fingers(sc: &PositionScenario, references: &[Reference]) -> Result<Vec<Vec<ControlTick>>> {
    references.par_iter().map(|r| simulate_position(sc, r)).collect()
}

pub const EMG_CHANNELS: usize = 8;

/// Raw EMG recording: time column plus eight channels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmgRecording {
    pub t: Vec<f64>,
    pub channels: Vec<[f64; EMG_CHANNELS]>,
}

impl EmgRecording {
    /// Parse `t,ch1..ch8` CSV. Row numbers in errors count the header as 1.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, reason: e.to_string() })?.clone();
        if headers.len() != EMG_CHANNELS + 1 {
            return Err(Error::Parse { row: 1, reason: format!("expected 9 columns, found {}", headers.len()) });
        }
        let mut rec = EmgRecording::default();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Parse { row: line, reason: e.to_string() })?;
            if row.len() != EMG_CHANNELS + 1 {
                return Err(Error::Parse { row: line, reason: format!("expected 9 fields, found {}", row.len()) });
            }
            let mut vals = [0.0; EMG_CHANNELS + 1];
            for (k, field) in row.iter().enumerate() {
                vals[k] = field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { row: line, reason: format!("bad number {field:?}") })?;
            }
            rec.t.push(vals[0]);
            rec.channels.push(std::array::from_fn(|k| vals[k + 1]));
        }
        Ok(rec)
    }

    /// Sample period, checked to be uniform within 1 %.
    pub fn sample_period(&self) -> Result<f64> {
        if self.t.len() < 2 {
            return Err(Error::EmptySeries);
        }
        let dt = (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64;
        for (k, w) in self.t.windows(2).enumerate() {
            if !(dt > 0.0) || ((w[1] - w[0]) - dt).abs() > 0.01 * dt {
                return Err(Error::Parse { row: k + 3, reason: "non-uniform sample rate".into() });
            }
        }
        Ok(dt)
    }
}

/// Second-order Butterworth low-pass via the bilinear transform.
#[derive(Debug, Clone, Copy)]
pub struct LowPass {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl LowPass {
    pub fn new(cutoff_hz: f64, sample_hz: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz / sample_hz).tan();
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        LowPass {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1] - self.a[0] * self.y[0] - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

/// Channel weights for the index, middle and ring references. The little
/// finger follows the ring finger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmgWeights {
    pub index: [f64; EMG_CHANNELS],
    pub middle: [f64; EMG_CHANNELS],
    pub ring: [f64; EMG_CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmgReferences {
    pub t: Vec<f64>,
    /// Stroke references in mm for index, middle, ring, little.
    pub strokes: Vec<[f64; 4]>,
}

pub fn emg_reference_pipeline(rec: &EmgRecording, weights: &EmgWeights, cutoff_hz: f64) -> Result<EmgReferences> {
    let dt = rec.sample_period()?;
    if !(cutoff_hz > 0.0 && cutoff_hz < 0.5 / dt) {
        return Err(Error::InvalidField { field: "cutoff_hz".into(), reason: "must lie in (0, Nyquist)".into() });
    }
    let mut filters = [LowPass::new(cutoff_hz, 1.0 / dt); EMG_CHANNELS];
    let w = [weights.index, weights.middle, weights.ring];
    let mut raw: Vec<[f64; 3]> = Vec::with_capacity(rec.channels.len());
    for ch in &rec.channels {
        let env: [f64; EMG_CHANNELS] = std::array::from_fn(|k| filters[k].step(ch[k].abs()));
        raw.push(std::array::from_fn(|f| w[f].iter().zip(env).map(|(a, b)| a * b).sum::<f64>().max(0.0)));
    }
    let mut max = [0.0f64; 3];
    for r in &raw {
        for f in 0..3 {
            max[f] = max[f].max(r[f]);
        }
    }
    let strokes = raw
        .iter()
        .map(|r| {
            let s: [f64; 3] = std::array::from_fn(|f| if max[f] > 0.0 { STROKE_MAX * r[f] / max[f] } else { 0.0 });
            [s[0], s[1], s[2], s[2]]
        })
        .collect();
    Ok(EmgReferences { t: rec.t.clone(), strokes })
}
