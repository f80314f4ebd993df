use thiserror::Error;

/// Errors produced by sampling, integration and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range (valid: 0..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("noise has {noise} channels but the system expects {system}")]
    ChannelMismatch { system: usize, noise: usize },

    /// The state left the finite guard region. `partial` is the last state
    /// that was still finite.
    #[error("divergence at t = {time}")]
    Divergence { time: f64, partial: Vec<f64> },

    #[error("coordinate singularity: {0}")]
    Singularity(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("conjugate point: |sin t1| = {sin_t1:e} is below {threshold:e}")]
    ConjugatePoint { sin_t1: f64, threshold: f64 },

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("malformed trajectory file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
