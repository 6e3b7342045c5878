use thiserror::Error;

/// Errors raised by the simulator and its supporting modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("duplicate position in configuration: {0:?}")]
    DuplicatePosition(Vec<f64>),

    #[error("duplicate particle index {0}")]
    DuplicateIndex(i64),

    #[error("particle index {0} is not alive")]
    UnknownParticle(i64),

    #[error("cardinality mismatch: {left} vs {right}")]
    CardinalityMismatch { left: usize, right: usize },

    #[error("point {0:?} is not in the configuration")]
    NotInConfiguration(Vec<f64>),

    #[error("cumulative birth rate is zero")]
    ZeroBirthRate,

    #[error("birth rate is not integrable: {0}")]
    NotIntegrable(String),

    #[error("majorant over {0} points is intractable (limit 20)")]
    MajorantIntractable(usize),

    #[error("model has no growth certificate")]
    NoCertificate,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside valid range [0, {limit}]")]
    TimeOutOfRange { t: f64, limit: f64 },

    #[error("coupling premise violated: {0}")]
    PremiseViolation(String),

    #[error("rejection sampler exceeded {0} proposals")]
    RejectionExhausted(usize),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
