use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not positive definite ({context}), even with maximum jitter")]
    NotPositiveDefinite { context: &'static str },
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("all log-weights are dead (-inf) or NaN")]
    AllWeightsDead,
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("EM sufficient statistics are singular ({0})")]
    SingularSufficientStatistics(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("exact enumeration over {paths} switching paths exceeds the limit of {limit}")]
    TooLarge { paths: f64, limit: usize },
    #[error("class {0} has no training sequences")]
    MissingClass(usize),
    #[error("label {label} is out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("path listed more than once in the manifest: {}", .0.display())]
    DuplicatePath(PathBuf),
    #[error("{}: frames are not strictly increasing at row {row}", path.display())]
    NonMonotoneFrames { path: PathBuf, row: usize },
    #[error("unknown behaviour label {0:?}")]
    UnknownLabel(String),
    #[error("conflicting labels for {}: file says {file}, manifest says {manifest}", path.display())]
    ConflictingLabel {
        path: PathBuf,
        file: String,
        manifest: String,
    },
    #[error("no label for {}", .0.display())]
    MissingLabel(PathBuf),
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid evaluation grid: {0}")]
    InvalidGrid(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
