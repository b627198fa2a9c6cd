//! Error type shared across the crate.

use thiserror::Error;

/// Errors from scoring, simulation, training, and file handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero-norm vector")]
    Normalization,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("adapted dimension {adapted} must be positive and smaller than input dimension {input}")]
    AdaptedDim { input: usize, adapted: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate household: {0}")]
    DegenerateHousehold(String),

    #[error("speaker '{speaker_id}' has {available} utterances, needs at least {required}")]
    SpeakerTooSmall {
        speaker_id: String,
        available: usize,
        required: usize,
    },

    #[error("no guest utterances available outside the household")]
    GuestPoolEmpty,

    #[error("clique search exhausted its budget: found {achieved} of {requested} households")]
    CliqueSearch { requested: usize, achieved: usize },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate trial set: {0}")]
    DegenerateTrialSet(String),

    #[error("household '{id}': {inner}")]
    Household { id: String, inner: Box<Error> },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
