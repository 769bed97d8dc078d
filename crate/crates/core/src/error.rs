use thiserror::Error;

/// Errors raised by the models and experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("infeasible rate: {0}")]
    InfeasibleRate(String),

    #[error("invalid interval: t_fb = {t_fb} s, t_u = {t_u} s")]
    InvalidInterval { t_fb: f64, t_u: f64 },

    #[error("interval out of range: t_u = {t_u} s not in (0, {max}) s")]
    IntervalOutOfRange { t_u: f64, max: f64 },

    #[error("zero reference power in stored SINR vector")]
    ZeroReference,

    #[error("non-positive log argument: {0}")]
    NegativeLog(String),

    #[error("no sign change of the expected derivative on [{lo}, {hi}] s")]
    NoRoot { lo: f64, hi: f64 },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Short machine-readable category used by the command line runner.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::Domain(_) => "domain",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::InfeasibleRate(_) => "infeasible-rate",
            Error::InvalidInterval { .. } => "invalid-interval",
            Error::IntervalOutOfRange { .. } => "interval-out-of-range",
            Error::ZeroReference => "zero-reference",
            Error::NegativeLog(_) => "negative-log",
            Error::NoRoot { .. } => "no-root",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
