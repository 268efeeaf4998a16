use std::io;

use thiserror::Error;

/// Every failure the merging pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sentence is empty after whitespace normalization")]
    EmptySentence,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("coefficient {0} outside its admissible range")]
    InvalidCoefficient(f64),
    #[error("incompatible models: {0}")]
    IncompatibleModels(String),
    #[error("weights are not on the simplex: {0}")]
    SimplexViolation(String),
    #[error("merged parameters are not finite")]
    MergeOverflow,
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("bit-flip mutation failed to produce finite parameters after {0} attempts")]
    MutationFailed(usize),
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("policy update produced non-finite values")]
    UpdateDiverged,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
