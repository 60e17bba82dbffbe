use thiserror::Error;

use crate::model::ParameterSet;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no year zero in the Gregorian calendar")]
    YearZero,

    #[error("year {0} outside supported range [-75000, 9999]")]
    OutOfRange(i64),

    #[error("invalid range: {lo} > {hi}")]
    InvalidRange { lo: i64, hi: i64 },

    #[error("cycle index {0} outside [0, 59]")]
    InvalidCycleIndex(i64),

    #[error("invalid encoding config: {0}")]
    InvalidEncoding(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("cannot tokenize {word:?} at byte {offset}: not in vocabulary")]
    TokenizationFailure { word: String, offset: usize },

    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: usize,
        /// Parameters from the last step whose loss was finite.
        last_good: Option<Box<ParameterSet>>,
    },

    #[error("zero-length vector has no direction")]
    ZeroVector,

    #[error("partition has no members")]
    EmptyPartition,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("clustering needs at least two nonempty classes")]
    DegeneratePartition,

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
