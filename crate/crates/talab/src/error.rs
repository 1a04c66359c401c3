//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("precision must be in [{min}, {max}], got {got}")]
    BadPrecision { got: u32, min: u32, max: u32 },

    #[error("operands have different precisions: {0} vs {1}")]
    PrecisionMismatch(u32, u32),

    #[error("value exceeds the largest magnitude representable at precision {p}")]
    PrecisionOverflow { p: u32 },

    #[error("division by zero")]
    DivisionByZero,

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("argument outside configured range: {0}")]
    RangeError(String),

    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("embedding dimension must be even and >= 2, got {0}")]
    BadDimension(usize),

    #[error("attention row {row} has zero normalizer")]
    DegenerateRow { row: usize },

    #[error("evaluation was not traced; no depth expression available")]
    TraceUnavailable,

    #[error("symbol {0} is not mapped by the morphism")]
    UnknownSymbol(usize),

    #[error("invalid monoid table: {0}")]
    BadTable(String),

    #[error("pair set contains a non-idempotent second component")]
    MalformedPairSet,

    #[error("could not reach the requested label balance within the retry budget")]
    BalanceUnreachable,

    #[error("data format error: {0}")]
    DataFormatError(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("operation not supported by this backend: {0}")]
    UnsupportedOp(&'static str),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::DataFormatError(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
