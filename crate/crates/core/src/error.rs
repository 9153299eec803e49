use thiserror::Error;

/// Errors raised anywhere in the forecasting pipeline.
///
/// The variants map onto three coarse classes (configuration, data and
/// numerics) which the command-line runner turns into exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate observation for {key} on {date} (lines {first} and {second})")]
    Duplicate {
        key: String,
        date: String,
        first: usize,
        second: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite input at step {step}, channel {channel}")]
    NonFiniteInput { step: usize, channel: usize },

    #[error("forecast diverged at step {step}")]
    Diverged { step: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("{dropped} of {total} ensemble members diverged")]
    EnsembleCollapsed { dropped: usize, total: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure class of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Duplicate { .. }
            | Error::Data(_)
            | Error::NonFiniteInput { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Diverged { .. }
            | Error::Singular(_)
            | Error::NoConvergence { .. }
            | Error::EnsembleCollapsed { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
