use thiserror::Error;

#[derive(Debug, Error)]
pub enum CvlError {
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("invalid drive: {0}")]
    Drive(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("mode {mode} is too close to the spectral edge for offset {offset}")]
    Edge { mode: usize, offset: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("missing measurement sector: {0}")]
    MissingSector(String),
    #[error("delay not found: {0}")]
    DelayNotFound(String),
    #[error("nonpositive shot variance in bin {0}")]
    NonpositiveShot(usize),
    #[error("node sets differ: {0}")]
    NodeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CvlError>;
