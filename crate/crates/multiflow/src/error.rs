//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("curve design error: {0}")]
    Design(String),

    #[error("singular branch between buses {from} and {to}: r = x = 0")]
    SingularBranch { from: usize, to: usize },

    #[error("degenerate voltage at bus {bus}: |V| = {magnitude:.3e} below floor {floor:.1e}")]
    DegenerateVoltage {
        bus: usize,
        magnitude: f64,
        floor: f64,
    },

    #[error("embedding linear system is singular at the current base point")]
    EmbeddingSingular,

    #[error("degenerate Pade table: {0}")]
    DegeneratePade(String),

    #[error("Pade evaluation at a denominator root (alpha = {0:.6e})")]
    PoleEvaluation(f64),

    #[error("corrector failed to converge within {max_iters} iterations (residual {residual:.3e})")]
    CorrectorFailure { max_iters: usize, residual: f64 },

    #[error("prediction error: {0}")]
    Prediction(String),

    #[error("step size fell below the floor {floor:.1e} before the traversal completed")]
    StepFloor { floor: f64 },

    #[error("Newton iteration did not converge: {0}")]
    NewtonFailure(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solution rejected: residual {residual:.3e} exceeds bound {bound:.1e}")]
    ResidualBound { residual: f64, bound: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable process exit code for the CLI: 2 I/O, 3 parse/model, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Parse { .. } | Error::Model(_) | Error::Json(_) | Error::Config(_) => 3,
            _ => 4,
        }
    }
}
