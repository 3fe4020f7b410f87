use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("channel `{channel}` is degenerate: {reason}")]
    DegenerateChannel { channel: String, reason: String },

    #[error("non-finite sample in subject `{subject}`, channel `{channel}`, row {row}")]
    NonFinite {
        subject: String,
        channel: String,
        row: usize,
    },

    #[error("invalid band `{name}` ({low_hz}-{high_hz} Hz) for sampling rate {fs_hz} Hz")]
    InvalidBand {
        name: String,
        low_hz: f64,
        high_hz: f64,
        fs_hz: f64,
    },

    #[error("series too short: {len} samples, need more than {required}")]
    TooShort { len: usize, required: usize },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("numerically singular system in {block}")]
    Singular { block: String },

    #[error("optimizer did not converge after {evaluations} evaluations")]
    NoConvergence { evaluations: usize },

    #[error("empty group {0}")]
    EmptyGroup(usize),

    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that originate in the numerics rather than in the
    /// shape or content of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_)
                | Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::Numerical(_)
        )
    }
}
