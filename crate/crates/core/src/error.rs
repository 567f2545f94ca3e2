use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("backward called before any forward pass was recorded")]
    NoForward,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty seed set")]
    EmptySeeds,
    #[error("{} scribble pixel(s) out of bounds: {:?}", .0.len(), .0)]
    OutOfBounds(Vec<Vec<usize>>),
    #[error("instance too large for brute-force evaluation ({0} pixels)")]
    TooLarge(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
