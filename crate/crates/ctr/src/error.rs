use thiserror::Error;

/// Everything that can go wrong between reading a schema file and writing a
/// checkpoint. Library code never panics on malformed input; it returns one of
/// these instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("field `{field}`: vocabulary would exceed {max} entries (including the reserved unknown slot)")]
    VocabOverflow { field: String, max: usize },

    #[error("record {record}: {msg}")]
    Encode { record: usize, msg: String },

    #[error("field {field}: value index {index} out of range for cardinality {cardinality}")]
    IndexOutOfRange { field: usize, index: u32, cardinality: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("keep probability must lie in [0, 1], got {0}")]
    BetaOutOfRange(f64),

    #[error("probability {0} outside the open interval (0, 1)")]
    Domain(f64),

    #[error("empty input: {0}")]
    EmptyData(String),

    #[error("AUC undefined: need at least one positive and one negative label")]
    AucUndefined,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("benchmark budget must be positive, got {0}s")]
    ZeroBudget(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
