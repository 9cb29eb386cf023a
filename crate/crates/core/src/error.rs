use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("OD matrix invalid at row {row}: {constraint} (residual {residual:e})")]
    InvalidOdMatrix {
        row: usize,
        constraint: String,
        residual: f64,
    },

    #[error("non-monotone cumulative series at index {index}")]
    NonMonotone { index: usize },

    #[error("degenerate Dirichlet draw after {attempts} attempts")]
    DegenerateDirichlet { attempts: usize },

    #[error("no path from station {origin} to station {destination}")]
    NoPath { origin: usize, destination: usize },

    #[error("travel delay {delay} for pair ({origin}, {destination}) exceeds window gap {gap}")]
    DelayExceedsGap {
        origin: usize,
        destination: usize,
        delay: u32,
        gap: usize,
    },

    #[error("scale parameter must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("observation must be non-negative, got {0}")]
    NegativeObservation(f64),

    #[error("zero total on the side to be rescaled in observation {0}")]
    ZeroTotal(usize),

    #[error("gap of {gap} values cannot be imputed from a series of length {len}")]
    GapTooWide { gap: usize, len: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("schema mismatch in {path}: expected {expected}, found {found}")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
