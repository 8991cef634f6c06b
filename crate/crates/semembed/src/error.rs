//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {0:?} not found in label table")]
    LabelNotFound(String),

    #[error("duplicate label id {0:?}")]
    DuplicateLabel(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("too many degenerate instances skipped: {skipped} of {total} in epoch {epoch}")]
    TooManySkipped {
        skipped: usize,
        total: usize,
        epoch: usize,
    },

    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors rooted in numerical trouble (degenerate projections,
    /// non-finite values, failed gradient checks) as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateInput(_)
                | Error::NonFinite(_)
                | Error::TooManySkipped { .. }
                | Error::GradCheckFailed(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
