// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exo_core::geometry::{load_geometry, Finger, MechanismGeometry};
use exo_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "exoctl", version, about = "Finger exoskeleton kinematics, design and control toolkit")]
pub struct Cli {
    /// Scenario file (TOML) with one optional table per subcommand and an
    /// optional [geometry] table.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 20240611)]
    pub seed: u64,
    /// Worker threads for link sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Geometry file (TOML), overrides the [geometry] table of --config.
    #[arg(long, global = true)]
    pub geometry: Option<PathBuf>,
    /// Finger preset used when no geometry is given.
    #[arg(long, global = true, default_value = "index")]
    pub finger: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Finger joint angles to mechanism state.
    SolveIk(SolveIkArgs),
    /// Measured stroke and instrumented angle to mechanism state.
    SolveFk(SolveFkArgs),
    /// Estimate the proximal phalanx length.
    Calibrate(CalibrateArgs),
    /// Jacobian blocks and J_A at one pose.
    Jacobian(PoseArgs),
    /// Joint torques for a unit actuator force over the joint grid.
    GraspReport(GridArgs),
    /// One-at-a-time sensitivity of the slider travels.
    Sensitivity(SensitivityArgs),
    /// Exhaustive link-length search.
    OptimizeLinks(OptimizeArgs),
    /// Closed-loop actuator simulation.
    Simulate(SimulateArgs),
    /// Haptic rendering along a joint trajectory.
    Render(RenderArgs),
    /// Compare the mapping-based rendering methods along a trajectory.
    Audit(AuditArgs),
    /// Run the acceptance suite.
    Accept,
}

#[derive(Args, Debug)]
pub struct SolveIkArgs {
    /// CSV with columns t,q_o1_deg,q_o2_deg.
    #[arg(long, conflicts_with = "pose")]
    pub input: Option<PathBuf>,
    /// Single pose "q_o1,q_o2" in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub pose: Option<String>,
    /// Accept states outside the stroke and slider limits.
    #[arg(long)]
    pub unbounded: bool,
}

#[derive(Args, Debug)]
pub struct SolveFkArgs {
    /// CSV with columns t,l_x_mm,q_B_deg.
    #[arg(long, conflicts_with = "meas")]
    pub input: Option<PathBuf>,
    /// Single measurement "l_x_mm,q_B_deg".
    #[arg(long, allow_hyphen_values = true)]
    pub meas: Option<String>,
    /// Use the closed-form solver.
    #[arg(long)]
    pub analytic: bool,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// CSV with columns t,l_x_mm,q_B_deg taken at the calibration stop.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Single measurement "l_x_mm,q_B_deg".
    #[arg(long, allow_hyphen_values = true)]
    pub meas: Option<String>,
    /// Generate the measurement from this phalanx length instead (mm).
    #[arg(long)]
    pub synthetic: Option<f64>,
    /// Distal slider position at the calibration stop (mm).
    #[arg(long)]
    pub c2: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PoseArgs {
    /// "q_o1,q_o2" in degrees.
    #[arg(long, default_value = "40,45", allow_hyphen_values = true)]
    pub pose: String,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Grid step in degrees.
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[arg(long, default_value = "40,45", allow_hyphen_values = true)]
    pub pose: String,
    /// Relative perturbation of each length.
    #[arg(long, default_value_t = 0.1)]
    pub perturbation: f64,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// Lattice step for every varied length (mm).
    #[arg(long)]
    pub step: Option<f64>,
    /// Search only a box of +-HALF mm around the reported optimum.
    #[arg(long)]
    pub half: Option<f64>,
    #[arg(long)]
    pub l_max: Option<f64>,
    #[arg(long)]
    pub c1_max: Option<f64>,
    #[arg(long)]
    pub c2_max: Option<f64>,
    #[arg(long)]
    pub ratio_min: Option<f64>,
    #[arg(long)]
    pub ratio_max: Option<f64>,
    /// Joint grid step in degrees.
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Score candidates by the worst pose instead of the mean.
    #[arg(long)]
    pub score_min: bool,
    /// Keep the actuator mount of the base geometry for every candidate.
    #[arg(long)]
    pub no_rezero: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// position, force or emg; overrides [simulate].mode.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub duration: Option<f64>,
    /// Disable the temperature filter.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// actuator, joint, proxy_torque or proxy_pose; overrides [render].method.
    #[arg(long)]
    pub method: Option<String>,
    /// CSV with columns t,q_o1_deg,q_o2_deg.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// CSV with columns t,q_o1_deg,q_o2_deg.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// Loaded configuration shared by all subcommands.
pub struct Context {
    pub geom: MechanismGeometry,
    pub finger: Finger,
    pub config: toml::Table,
    /// Directory relative to which paths inside the config resolve.
    pub config_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl Context {
    pub fn section(&self, name: &str) -> toml::Table {
        match self.config.get(name) {
            Some(toml::Value::Table(t)) => t.clone(),
            _ => toml::Table::new(),
        }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }
}

fn load_context(cli: &Cli) -> Result<Context> {
    let finger = Finger::parse(&cli.finger)?;
    let (config, config_dir) = match &cli.config {
        Some(p) => {
            let text = output::read_text(p)?;
            let t: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
            (t, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (toml::Table::new(), PathBuf::from(".")),
    };
    let geom = if let Some(p) = &cli.geometry {
        load_geometry(&output::read_text(p)?)?
    } else if let Some(toml::Value::Table(t)) = config.get("geometry") {
        let mut t = t.clone();
        if !t.contains_key("preset") {
            t.insert("preset".into(), toml::Value::String(finger.name().into()));
        }
        load_geometry(&toml::to_string(&t).map_err(|e| Error::Config(e.to_string()))?)?
    } else {
        MechanismGeometry::preset(finger)
    };
    if cli.workers == 0 {
        return Err(Error::InvalidField { field: "workers".into(), reason: "must be >= 1".into() });
    }
    Ok(Context { geom, finger, config, config_dir, seed: cli.seed, workers: cli.workers })
}

fn exit_code(e: &Error) -> u8 {
    match e.code() {
        "ConfigError" => 3,
        "ValidationError" => 4,
        "ParseError" => 5,
        "PreconditionError" => 6,
        _ => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<bool> {
        let ctx = load_context(&cli)?;
        let mut sink = output::Sink::new(&cli.out, cli.seed, &ctx.geom)?;
        commands::run(&cli.command, &ctx, &mut sink)
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(8),
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error {}: {msg}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}
