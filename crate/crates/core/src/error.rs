use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("frame dimension mismatch: expected {expected_width}x{expected_height}, {path} is {width}x{height}")]
    DimensionMismatch {
        path: PathBuf,
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    #[error("malformed mask: {0}")]
    MalformedMask(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("input contains non-finite values: {0}")]
    NonFinite(String),

    #[error("insufficient data: need at least {needed} patches, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("empty patch set for person {person_id}")]
    EmptyPatchSet { person_id: usize },

    #[error("person sets differ between intervals {0} and {1}")]
    PersonSetMismatch(usize, usize),

    #[error("{0} requires at least 3 persons; use the two-person measures instead")]
    UseSpecialCase(&'static str),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("could not draw well-separated bases after {0} attempts")]
    SeparationInfeasible(usize),

    #[error("support enumeration limited to 12 atoms, got {0}")]
    OracleTooLarge(usize),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("need at least {needed} entities, got {got}")]
    TooFewEntities { needed: usize, got: usize },

    #[error("malformed tensor container {path}: {reason}")]
    MalformedTensor { path: PathBuf, reason: String },
}

impl Error {
    /// Process exit code for the CLI: 2 configuration, 3 data, 4 numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::OracleTooLarge(_) => 2,
            Error::DegenerateMeasure(_) | Error::NonFinite(_) | Error::SeparationInfeasible(_) => {
                4
            }
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
