use std::fmt;

/// Failures across all solvers and loaders.
///
/// Every variant carries a short stable code (see [`Error::code`]) so that
/// the command-line front end can print a single machine-parsable line.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Config(String),
    InvalidField { field: String, reason: String },
    Parse { row: usize, reason: String },
    Precondition(String),
    NonConvergence { iterations: usize, residual: f64 },
    InfeasiblePose { bound: String, value: f64 },
    AmbiguousBranch { q_o1: f64, q_o2: f64 },
    GeometryDegenerate { triangle: String, argument: f64 },
    ImplausibleLength { l_lm: f64 },
    SingularConstraintBlock { condition: f64, q_o1: f64, q_o2: f64 },
    SingularJacobian,
    DegeneratePassiveColumn,
    DegenerateK,
    RankDeficientMapping,
    RankDeficientNonactuated,
    EmptySeries,
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "ConfigError",
            Error::InvalidField { .. } => "ValidationError",
            Error::Parse { .. } => "ParseError",
            Error::Precondition(_) => "PreconditionError",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::InfeasiblePose { .. } => "InfeasiblePose",
            Error::AmbiguousBranch { .. } => "AmbiguousBranch",
            Error::GeometryDegenerate { .. } => "GeometryDegenerate",
            Error::ImplausibleLength { .. } => "ImplausibleLength",
            Error::SingularConstraintBlock { .. } => "SingularConstraintBlock",
            Error::SingularJacobian => "SingularJacobian",
            Error::DegeneratePassiveColumn => "DegeneratePassiveColumn",
            Error::DegenerateK => "DegenerateK",
            Error::RankDeficientMapping => "RankDeficientMapping",
            Error::RankDeficientNonactuated => "RankDeficientNonactuated",
            Error::EmptySeries => "EmptySeries",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config: {m}"),
            Error::InvalidField { field, reason } => write!(f, "field {field}: {reason}"),
            Error::Parse { row, reason } => write!(f, "row {row}: {reason}"),
            Error::Precondition(m) => write!(f, "precondition: {m}"),
            Error::NonConvergence { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:.3e} mm)")
            }
            Error::InfeasiblePose { bound, value } => write!(f, "bound {bound} violated ({value:.4})"),
            Error::AmbiguousBranch { q_o1, q_o2 } => write!(
                f,
                "converged outside the joint box at ({:.3} deg, {:.3} deg)",
                q_o1.to_degrees(),
                q_o2.to_degrees()
            ),
            Error::GeometryDegenerate { triangle, argument } => {
                write!(f, "triangle {triangle} cannot close (cosine {argument:.6})")
            }
            Error::ImplausibleLength { l_lm } => write!(f, "estimated l_LM = {l_lm:.3} mm outside [25, 80]"),
            Error::SingularConstraintBlock { condition, q_o1, q_o2 } => write!(
                f,
                "constraint block condition {condition:.3e} at ({:.3} deg, {:.3} deg)",
                q_o1.to_degrees(),
                q_o2.to_degrees()
            ),
            Error::SingularJacobian => write!(f, "reduced Jacobian is singular"),
            Error::DegeneratePassiveColumn => write!(f, "passive column of J_A vanishes"),
            Error::DegenerateK => write!(f, "K_stiff J_p has no full column rank"),
            Error::RankDeficientMapping => write!(f, "J^T J is singular"),
            Error::RankDeficientNonactuated => write!(f, "J_n^T J_n is singular"),
            Error::EmptySeries => write!(f, "empty series"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
