use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the restoration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("problem too large to materialize: n = {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("numerical breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("unsupported or malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{stage} stage failed: {cause}")]
    Stage { stage: String, cause: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            cause: Box::new(self),
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(format!("length {expected}"), format!("length {actual}")));
    }
    Ok(())
}
