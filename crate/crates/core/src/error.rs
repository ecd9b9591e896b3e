use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mask inconsistent with template: {0}")]
    MaskMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("skinning weights row {row} sums to {sum}")]
    WeightRow { row: usize, sum: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("loss stage: {0}")]
    Stage(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("fitting diverged: loss {loss:e} exceeds 1e3 x initial {initial:e}")]
    FitDivergence { loss: f64, initial: f64 },

    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("malformed text: {0}")]
    Text(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
