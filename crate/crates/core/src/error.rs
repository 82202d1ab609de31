//! Error type shared by every module of the solver.

use thiserror::Error;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad configuration, arguments or input files (exit code 2).
    Config,
    /// A standing assumption of the calibration problem is violated (exit code 3).
    Assumption,
    /// A numerical routine failed (exit code 4).
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Assumption => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScpError {
    #[error("map evaluation produced a non-finite value at {point:?}")]
    MapEvaluation { point: Vec<f64> },

    #[error("Jacobian is rank-deficient at {point:?} (Gram factor {factor:e})")]
    DegenerateJacobian { point: Vec<f64>, factor: f64 },

    #[error("level set Q = {q} does not intersect the domain")]
    EmptyContour { q: f64 },

    #[error("contour tracing failed: {0}")]
    ContourTrace(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid density specification: {0}")]
    InvalidSpec(String),

    #[error("truncation acceptance rate {rate:e} is below 1e-4; covariance too wide for the box")]
    Truncation { rate: f64 },

    #[error("measure has no density with respect to Lebesgue measure")]
    NoDensity,

    #[error("sample range is degenerate (max == min)")]
    DegenerateRange,

    #[error("all {total} samples fall outside the output partition")]
    EmptyHistogram { total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contour quadrature did not converge: {coarse} vs {fine}")]
    Quadrature { coarse: f64, fine: f64 },

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("solution sampler acceptance rate {rate:e} is below 1e-4")]
    WeightDegeneracy { rate: f64 },

    #[error("shell around q = {q} holds {found} prior samples, need at least {required}; widen the shell or draw more prior samples")]
    ShellStarvation { q: f64, found: usize, required: usize },

    #[error("partition or grid mismatch: {0}")]
    PartitionMismatch(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("filter left no records: {0}")]
    EmptyFilter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ScpError {
    pub fn category(&self) -> ErrorCategory {
        use ScpError::*;
        match self {
            InvalidDomain(_) | InvalidSpec(_) | InvalidArgument(_) | PartitionMismatch(_)
            | Schema(_) | EmptyFilter(_) | Config(_) | Io(_) | Csv(_) | Json(_) => {
                ErrorCategory::Config
            }
            DegenerateJacobian { .. } | NoDensity | SupportMismatch(_) | ShellStarvation { .. }
            | WeightDegeneracy { .. } | EmptyContour { .. } => ErrorCategory::Assumption,
            MapEvaluation { .. } | ContourTrace(_) | Truncation { .. } | DegenerateRange
            | EmptyHistogram { .. } | Quadrature { .. } => ErrorCategory::Numeric,
        }
    }
}

pub type Result<T, E = ScpError> = std::result::Result<T, E>;
