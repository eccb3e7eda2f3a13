use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("recurrence depth {requested} exceeds K_max {max}")]
    DepthExceeded { requested: usize, max: usize },

    #[error("recurrence depth must be at least 1")]
    ZeroDepth,

    #[error("computation graph is not topologically ordered (node {node} reads node {parent})")]
    CyclicGraph { node: usize, parent: usize },

    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("corrupt checkpoint manifest: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint tensor {name}: expected shape {expected:?}, found {found:?}")]
    CheckpointShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("world vocabulary budget exceeded: need {needed} tokens, budget {budget}")]
    VocabBudget { needed: usize, budget: usize },

    #[error("category too small: {0}")]
    CategoryTooSmall(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("duplicate option token {0}")]
    DuplicateOption(usize),

    #[error("distribution does not sum to one (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("embedding similarity requires model parameters")]
    MissingParams,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
