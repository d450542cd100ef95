use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{name}` must be positive")]
    NonPositiveParameter { name: &'static str },

    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("leg cannot reach the pedal at crank angle {crank_angle_deg:.1} deg ({side} leg)")]
    Unreachable { crank_angle_deg: f64, side: &'static str },

    #[error("simulation produced a non-finite state at t = {sim_time:.3} s")]
    NonFiniteState { sim_time: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("not enough data: need {needed} tuples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("interval [{on_deg}, {off_deg}) would become degenerate")]
    DegenerateInterval { on_deg: f64, off_deg: f64 },

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("policy did not settle: laps disagree on {disagreement:.1}% of grid points")]
    NonConvergentPrevAction { disagreement: f64 },

    #[error("session logs were recorded on different simulator configurations")]
    InconsistentConfig,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by unreadable or malformed input files rather
    /// than by the content of otherwise well-formed inputs.
    pub fn is_io_or_parse(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Json(_) | Error::Csv(_))
    }

    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonPositiveParameter { .. } => "non_positive_parameter",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Unreachable { .. } => "unreachable",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DegenerateInterval { .. } => "degenerate_interval",
            Error::InvalidPattern(_) => "invalid_pattern",
            Error::NonConvergentPrevAction { .. } => "non_convergent_prev_action",
            Error::InconsistentConfig => "inconsistent_config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
            Error::Json(_) => "parse",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
