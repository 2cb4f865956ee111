use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Decode(String),
    #[error("probe aborted: {failures} of {total} pieces failed")]
    Aborted { failures: usize, total: usize },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("piece {0:?} has no text")]
    MissingText(String),
    #[error("need at least {need} records, got {got}")]
    TooFewRecords { need: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ProbeError {
    /// Transport-level failures (as opposed to bad input).
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            ProbeError::Transport(_) | ProbeError::Status { .. } | ProbeError::Decode(_) | ProbeError::Aborted { .. } | ProbeError::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, ProbeError>;
