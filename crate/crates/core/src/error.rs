use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parameter sets are not aligned: {0}")]
    Misaligned(String),

    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },

    #[error("token id {token} is out of range for a vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("sequence of length {len} does not fit (context length {context_len}, minimum {min})")]
    BadSequenceLength {
        len: usize,
        context_len: usize,
        min: usize,
    },

    #[error("label {label} is out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),

    #[error("inadmissible placement for {kind}: {reason}")]
    InadmissiblePlacement { kind: String, reason: String },

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("protected group {0} has no members")]
    MissingGroup(u8),

    #[error("gap for label {0} is undefined")]
    UndefinedGap(usize),

    #[error("records do not describe the same dataset/task: {0}")]
    MismatchedRecords(String),

    #[error("fisher diagonal has zero trace")]
    ZeroTrace,

    #[error("fisher diagonal is not normalized")]
    NotNormalized,

    #[error("random direction had zero norm after {0} attempts")]
    DegenerateDraw(usize),

    #[error("likelihood ratio average overflows f64 (log value {0})")]
    Overflow(f64),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("malformed container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
