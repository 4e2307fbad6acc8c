use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid concept bank: {0}")]
    InvalidBank(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("activation length {actual} does not match concept count {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector `{0}`")]
    ZeroNorm(String),

    #[error("dataset failed validation with {} violation(s)", .0.violations.len())]
    Validation(ValidationReport),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("unknown concept id {0}")]
    UnknownConcept(usize),

    #[error("value {value} for concept {concept_id} is outside the activation range [{min}, {max}]")]
    OutOfRange {
        concept_id: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("no records for class `{0}`")]
    MissingClassRecords(String),

    #[error("missing prior for class `{0}`")]
    MissingPrior(String),

    #[error("concept `{0}` has no group tag")]
    UngroupedConcept(String),

    #[error("record `{0}` carries no ground-truth concepts")]
    MissingGroundTruth(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rendered prompt exceeds {cap} characters in section `{section}`")]
    Oversize { section: &'static str, cap: usize },

    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),

    #[error("backend error: {0}")]
    Backend(#[from] BackendError),

    #[error("fixture `{file}` row {row}: {reason}")]
    Fixture {
        file: String,
        row: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Failure reported by a completion backend.
#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("malformed backend response: {0}")]
    Malformed(String),

    #[error("backend cannot serve this request: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
