use std::io;

use thiserror::Error;

/// Errors produced by the partitioning, fusion and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("cell level {0} out of range (0..={max})", max = crate::cells::MAX_LEVEL)]
    LevelOutOfRange(u32),

    #[error("invalid cell: {0}")]
    InvalidCell(String),

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("level mismatch: expected {expected}, found {found}")]
    LevelMismatch { expected: u8, found: u8 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("cannot reach {target} classes: region graph has {components} connected components")]
    Infeasible { target: usize, components: usize },

    #[error("invalid score vector for set {set_id}: {reason}")]
    InvalidScores { set_id: String, reason: String },

    #[error("malformed input at line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("hash mismatch for {artifact}: expected {expected}, found {found}")]
    HashMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
