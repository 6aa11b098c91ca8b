use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
///
/// Every variant renders as a single line so CLI diagnostics stay
/// machine-parsable (`tag: detail`).
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid-input: {0}")]
    InvalidInput(String),

    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid-config: {0}")]
    InvalidConfig(String),

    /// Config-file errors always name the offending key.
    #[error("config: key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("unknown-problem: {0}")]
    UnknownProblem(String),

    #[error("stack-underflow: {0}")]
    StackUnderflow(String),

    /// Non-finite loss contribution, tagged with the batch point that produced it.
    #[error("diverged-training: non-finite loss at batch point {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("diverged-training: non-finite parameter gradient")]
    NonFiniteGradient,

    /// Training-loop failure enriched with stage and epoch.
    #[error("diverged-training: stage {stage} epoch {epoch}: {detail}")]
    Diverged {
        stage: usize,
        epoch: usize,
        detail: String,
    },

    #[error("degenerate-metric: {0}")]
    DegenerateMetric(String),

    #[error("unsupported-oracle: {0}")]
    UnsupportedOracle(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SolverError {
    /// Stable kind tag for machine-parsable diagnostics and exit reporting.
    pub fn tag(&self) -> &'static str {
        match self {
            SolverError::InvalidInput(_) => "invalid-input",
            SolverError::ShapeMismatch(_) => "shape-mismatch",
            SolverError::InvalidConfig(_) => "invalid-config",
            SolverError::Config { .. } => "config",
            SolverError::UnknownProblem(_) => "unknown-problem",
            SolverError::StackUnderflow(_) => "stack-underflow",
            SolverError::NonFiniteLoss { .. }
            | SolverError::NonFiniteGradient
            | SolverError::Diverged { .. } => "diverged-training",
            SolverError::DegenerateMetric(_) => "degenerate-metric",
            SolverError::UnsupportedOracle(_) => "unsupported-oracle",
            SolverError::Checkpoint(_) => "checkpoint",
            SolverError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SolverError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;
