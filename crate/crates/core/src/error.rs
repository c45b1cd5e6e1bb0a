use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed schema: {0}")]
    Schema(String),

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("unknown attribute `{table}.{attribute}`")]
    UnknownAttribute { table: String, attribute: String },

    #[error("duplicate table `{0}`")]
    DuplicateTable(String),

    #[error("duplicate attribute `{table}.{attribute}`")]
    DuplicateAttribute { table: String, attribute: String },

    #[error("csv error in table `{table}`: {message}")]
    Csv { table: String, message: String },

    #[error("table `{0}` has no loaded data")]
    NotIngested(String),

    #[error("sql error: {0}")]
    Sql(String),

    #[error("join not in schema: {0}")]
    JoinNotInSchema(String),

    #[error("disconnected join graph over tables {0}")]
    Disconnected(String),

    #[error("unsupported predicate: {0}")]
    UnsupportedPredicate(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("subgraph enumeration cap exceeded: {nodes} nodes > {cap}")]
    CapExceeded { nodes: usize, cap: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt statistics file: {0}")]
    CorruptStats(String),

    #[error("missing cardinality for sub-plan {{{0}}}")]
    MissingCardinality(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in the model or its checkpoint, as
    /// opposed to schemas, data or queries.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::NonFiniteGradient(_)
                | Error::NonFiniteLoss { .. }
                | Error::Config(_)
                | Error::CorruptCheckpoint(_)
                | Error::CheckpointVersion { .. }
        )
    }
}
