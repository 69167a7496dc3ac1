use crate::sync::StreamId;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("probability {0} is outside [0, 1]")]
    ProbabilityDomain(f64),

    #[error("out-of-order timestamp on {stream}: {timestamp} does not exceed {last}")]
    OutOfOrder {
        stream: StreamId,
        timestamp: f64,
        last: f64,
    },

    /// Malformed input data. `offset` is the byte offset of the problem.
    #[error("{message} (at byte {offset})")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// True for errors caused by reading or decoding input, as opposed to
    /// invalid parameters or failed computations.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Format { .. } | Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
