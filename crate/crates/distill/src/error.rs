use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("formula sampling diverged: {0} consecutive rejections (supercritical probabilities?)")]
    SamplingDiverged(usize),

    #[error("formula is not derivable in the grammar: {0}")]
    NotDerivable(String),

    #[error("enumeration budget exceeded: {0} formulas (limit {1})")]
    ResourceExhausted(u64, u64),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format version mismatch: found {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },

    #[error("inference degenerate: total importance weight is zero")]
    InferenceDegenerate,

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("incompatible configuration: {0}")]
    Incompatible(String),

    #[error("checkpoint corrupted: {0}")]
    Corrupted(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
