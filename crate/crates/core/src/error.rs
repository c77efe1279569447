use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite input weight.
    #[error("data error: non-finite weight {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    /// Geometry that contradicts the statistics it was derived from.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A value that does not fit the requested bit width.
    #[error("encode error: value {value} at index {index} does not fit in {bit_width} bits")]
    Overflow { index: usize, value: u64, bit_width: u8 },

    /// Malformed or truncated serialized data.
    #[error("format error at offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NonFinite { .. } => "data",
            Error::Consistency(_) => "consistency",
            Error::Overflow { .. } => "encode",
            Error::Format { .. } => "format",
            Error::Dimension(_) => "dimension",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
