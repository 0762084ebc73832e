use thiserror::Error;

/// Errors produced by the quantization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt data: {0}")]
    Corrupt(#[from] FormatError),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("infeasible budget: minimum achievable average bitwidth is {min_avg_bits:.6} bits/param")]
    Infeasible { min_avg_bits: f64 },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Reasons a binary artifact (grid or quantized tensor) is rejected on read.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("truncated input: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("grid mismatch: tensor expects grid crc {expected:#010x}, got {found:#010x}")]
    GridMismatch { expected: u32, found: u32 },
    #[error("code {code} out of range for grid of {n} points")]
    CodeOutOfRange { code: u32, n: u32 },
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
