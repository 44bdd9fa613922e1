use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems with a single probability vector.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("expected {expected} probabilities, found {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("probability p_{index} = {value} is negative or not finite")]
    NegativeEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, outside 1 +/- 1e-6")]
    SumOutOfTolerance { sum: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Record(#[from] RecordError),

    #[error("{path}:{line}: {message}")]
    Input { path: PathBuf, line: u64, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("subject {subject}: no datapoints predicted in the relevant classes")]
    EmptyRelevantSubset { subject: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("correlation {0} outside the open interval (-1, 1)")]
    RhoOutOfRange(f64),

    #[error("too few pairs: need at least {needed}, have {found}")]
    TooFewPairs { needed: usize, found: usize },

    #[error("bootstrap iteration {iteration}: {attempts} consecutive degenerate resamples")]
    TooManyDegenerateResamples { iteration: usize, attempts: usize },

    #[error("insufficient overlap: {found} usable subjects, need at least {needed}")]
    InsufficientOverlap { needed: usize, found: usize },

    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("record {index} has no true label")]
    MissingLabels { index: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("model checkpoint: {0}")]
    Checkpoint(String),
}

/// Broad failure classes, stable across releases; the CLI maps them to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    ScoringPolicy,
    Statistical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::EmptyRelevantSubset { .. } => ErrorClass::ScoringPolicy,
            Error::DegenerateVariance(_)
            | Error::RhoOutOfRange(_)
            | Error::TooFewPairs { .. }
            | Error::TooManyDegenerateResamples { .. }
            | Error::InsufficientOverlap { .. }
            | Error::DegenerateData(_) => ErrorClass::Statistical,
            _ => ErrorClass::Input,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
