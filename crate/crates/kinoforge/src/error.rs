use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("propagation duration {duration} outside [{t_min}, {t_max}]")]
    InvalidDuration {
        duration: f64,
        t_min: f64,
        t_max: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("control resolution exceeded cap {cap}; eps_E too small for this duration")]
    ResolutionOverflow { cap: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("empty velocity histogram")]
    EmptyHistogram,

    #[error("map error: {0}")]
    Map(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("planning query invalid: {0}")]
    InvalidQuery(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("problem generation failed: {0}")]
    ProblemGeneration(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
