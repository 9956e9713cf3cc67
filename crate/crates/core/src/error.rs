use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("id {id} out of range for {kind} vocabulary of size {len}")]
    InvalidId { kind: &'static str, id: u32, len: usize },
    #[error("invalid entity subset: {0}")]
    InvalidSubset(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("rho must lie in (0, 1), got {0}")]
    InvalidRho(f64),
    #[error("number of diffusion steps must be at least 1, got {0}")]
    InvalidSteps(usize),
    #[error("timestep {t} outside 0..={total}")]
    InvalidStep { t: usize, total: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("embedding dimension must be even, got {0}")]
    InvalidDim(usize),
    #[error("incompatible graphs: {0}")]
    IncompatibleGraphs(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("loss has no included cells")]
    EmptyLossSupport,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid similarity matrix: {0}")]
    InvalidSimilarity(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not match dataset: {0}")]
    DatasetMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint mode mismatch: expected {expected}, found {found}")]
    WrongCheckpointMode { expected: &'static str, found: &'static str },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
