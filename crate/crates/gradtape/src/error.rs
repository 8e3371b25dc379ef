use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("loss must be a 1x1 scalar, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("backward already ran on this tape; build a new graph")]
    GraphConsumed,
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("unsupported checkpoint: {0}")]
    Unsupported(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}
