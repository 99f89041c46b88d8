//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown point id {0}")]
    UnknownPointId(u64),

    #[error("unknown user id {0:?}")]
    UnknownUserId(String),

    #[error("invalid unlearn request: {0}")]
    InvalidRequest(String),

    #[error("shard {shard} received no points: {detail}")]
    EmptyShard { shard: usize, detail: String },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("models not merge-compatible: member {left} and member {right} differ ({detail})")]
    IncompatibleArch {
        left: usize,
        right: usize,
        detail: String,
    },

    #[error("aggregation mode does not match task: {0}")]
    ModeMismatch(String),

    #[error("checkpoint missing for shard {shard} stage {stage} (latest durable stage: {latest})")]
    CheckpointMissing {
        shard: usize,
        stage: usize,
        latest: String,
    },

    #[error("checkpoint digest mismatch for shard {shard} stage {stage}: the stored stage was trained on different data")]
    DigestMismatch { shard: usize, stage: usize },

    #[error("checkpoint config mismatch for shard {shard} stage {stage}: {detail}")]
    ConfigMismatch {
        shard: usize,
        stage: usize,
        detail: String,
    },

    #[error("checkpoint key already written: shard {shard} stage {stage}")]
    CheckpointExists { shard: usize, stage: usize },

    #[error("generation mismatch: {0}")]
    GenerationMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("invalid metric input: {0}")]
    InvalidMetricInput(String),

    #[error("run error: {0}")]
    Run(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
