use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("degenerate frame for spin '{label}': omega_{branch} = 0 (level crossing)")]
    DegenerateFrame { label: String, branch: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("register has {n} spins; the oracle is limited to {max}")]
    RegisterTooLarge { n: usize, max: usize },

    #[error("protocol {protocol} needs parameter '{param}'")]
    IncompleteParams { protocol: String, param: String },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("pulse count must be even and >= 2, got {0}")]
    OddPulseCount(usize),

    #[error("sweep grid is not uniformly spaced")]
    NonUniformGrid,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange { what: String, value: f64, lo: f64, hi: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
