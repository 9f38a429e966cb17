use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("costate vector is zero (all entries below {tolerance:e})")]
    ZeroCostate { tolerance: f64 },

    #[error("point lies outside the {chart} chart: {reason}")]
    ChartSingularity { chart: String, reason: String },

    #[error("derivative evaluation failed: {0}")]
    DerivativeFailure(String),

    #[error("control {control:?} is not in the control set")]
    ControlOutOfSet { control: Vec<f64> },

    #[error("evaluation failed: {0}")]
    EvaluationFailure(String),

    #[error("integration step failed: {0}")]
    StepFailure(String),

    #[error("sample grids do not match: {0}")]
    GridMismatch(String),

    #[error("target constraint Jacobian is rank deficient (rank {rank} < {expected})")]
    RankDeficient { rank: usize, expected: usize },

    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_residual: f64,
        best_iterate: Vec<f64>,
        residual_history: Vec<f64>,
    },

    #[error("oracle enumeration needs {required} evaluations, budget is {limit}")]
    BudgetExceeded { required: u128, limit: u128 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code, used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroCostate { .. } => "zero_costate",
            Error::ChartSingularity { .. } => "chart_singularity",
            Error::DerivativeFailure(_) => "derivative_failure",
            Error::ControlOutOfSet { .. } => "control_out_of_set",
            Error::EvaluationFailure(_) => "evaluation_failure",
            Error::StepFailure(_) => "step_failure",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::NoConvergence { .. } => "no_convergence",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::InvalidInput(_) => "invalid_input",
            Error::UnknownName { .. } => "unknown_name",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn singular(chart: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ChartSingularity {
            chart: chart.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}
