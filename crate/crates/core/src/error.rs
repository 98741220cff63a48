use thiserror::Error;

use crate::program::ValidityReason;

#[derive(Debug, Error)]
pub enum CsgError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("empty program")]
    Empty,

    #[error("2D and 3D instructions mixed in one program (at byte {position})")]
    MixedMode { position: usize },

    #[error("invalid program: {0:?}")]
    InvalidProgram(ValidityReason),

    #[error("stop symbol at position {at} is not the final instruction")]
    MisplacedStop { at: usize },

    #[error("program of length {len} exceeds max length {max}")]
    TooLong { len: usize, max: usize },

    #[error("mode mismatch: expected {expected}, found {found}")]
    ModeMismatch { expected: &'static str, found: &'static str },

    #[error("no program satisfied the rejection rules after {attempts} attempts")]
    GenerationTimeout { attempts: usize },

    #[error("decoder step {step} exceeds the limit of {limit}")]
    StepLimitExceeded { step: usize, limit: usize },

    #[error("training set is empty")]
    EmptyTrainset,

    #[error("vocabulary hash mismatch: checkpoint has {expected}, vocabulary is {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CsgError> = std::result::Result<T, E>;
