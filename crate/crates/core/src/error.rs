use thiserror::Error;

/// Errors raised across the simulation, fitting, optimization and training layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("geometry construction failed: {0}")]
    Geometry(String),

    #[error("non-finite state: {0}")]
    NonFiniteState(String),

    #[error("integration blow-up at node {node} (t = {time:.4} s)")]
    IntegrationBlowup { node: usize, time: f64 },

    #[error("settling did not converge within {time:.1} s (kinetic energy {energy:.3e} J)")]
    SettleFailure { time: f64, energy: f64 },

    #[error("degenerate bar {bar}: endpoint separation {length:.3e} m")]
    DegenerateBar { bar: usize, length: f64 },

    #[error("internal consistency violated: {0}")]
    Internal(String),

    #[error("unknown reduction choice `{0}`")]
    UnknownReduction(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category used by the command-line driver.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) | Error::UnknownReduction(_) => {
                "config"
            }
            Error::Geometry(_) | Error::Internal(_) => "internal",
            Error::NonFiniteState(_)
            | Error::IntegrationBlowup { .. }
            | Error::SettleFailure { .. }
            | Error::DegenerateBar { .. } => "simulation",
            Error::DimensionMismatch { .. } | Error::EmptyTrainingSet => "training",
            Error::Checkpoint(_) | Error::Json(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
