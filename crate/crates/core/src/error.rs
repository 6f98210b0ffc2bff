use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty data set")]
    EmptyData,
    #[error("non-finite training loss {loss} at epoch {epoch}, batch {batch} (learning rate {lr} too high?)")]
    LossDiverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        lr: f32,
    },
    #[error("empty update")]
    EmptyUpdate,
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("non-finite value produced: {0}")]
    NonFinite(String),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("config error:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptStream(msg.into())
    }
}
