//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {}", .0.join("; "))]
    InvalidArchitecture(Vec<String>),

    #[error("malformed architecture vector: {0}")]
    MalformedVector(String),

    #[error("mutation exhausted after {attempts} attempts")]
    MutationExhausted { attempts: usize },

    #[error("neighbor exhaustion: found {found} unique neighbors, requested {requested}")]
    NeighborsExhausted { found: usize, requested: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("sparse index {index} out of range for field {field} (cardinality {cardinality})")]
    SparseIndexOutOfRange {
        field: usize,
        index: u32,
        cardinality: u32,
    },

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("subsample of {rows} rows exceeds dataset size {size}")]
    SubsampleTooLarge { rows: usize, size: usize },

    #[error("too few records: got {got}, need at least {need}")]
    TooFewRecords { got: usize, need: usize },

    #[error("degenerate labels: fewer than two distinct relevance grades")]
    DegenerateLabels,

    #[error("empty population")]
    EmptyPopulation,

    #[error("rank {rank} outside 1..={p}")]
    RankOutOfRange { rank: usize, p: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("AUC undefined: labels contain a single class")]
    SingleClassAuc,

    #[error("kendall tau-b undefined: a tie-corrected denominator factor is zero")]
    TauUndefined,

    #[error("window {window} larger than series length {len}")]
    WindowTooLarge { window: usize, len: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("label domain error: {0}")]
    LabelDomain(String),

    #[error("virtual-loss slot {0} unknown or already cleared")]
    UnknownSlot(u64),

    #[error("every initial evaluation failed; search aborted")]
    InitFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
