use std::path::PathBuf;

use thiserror::Error;

use crate::data::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("class without prototype: {0}")]
    MissingPrototype(ClassId),

    #[error("non-disjoint split: class {0} is both seen and unseen")]
    NonDisjointSplit(ClassId),

    #[error("unknown class id {0}")]
    UnknownClass(ClassId),

    #[error("parse error in {}:{line}: {msg}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid dataset bundle: {}", .0.join("; "))]
    InvalidBundle(Vec<String>),

    #[error("invalid lambda policy: {0}")]
    InvalidPolicy(String),

    #[error("prototype pool has {0} classes, at least 2 are required")]
    PoolTooSmall(usize),

    #[error("target is not on the probability simplex: {0}")]
    NotSimplex(String),

    #[error("input outside [0, 1]: {0}")]
    OutOfRange(String),

    #[error("batch size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("empty class {0}: no samples")]
    EmptyClass(ClassId),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no unlabeled samples: transductive mode requires t > l")]
    NoUnlabeledSamples,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("key mismatch between method and reference scores: {0}")]
    KeyMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
