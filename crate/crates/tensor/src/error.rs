use thiserror::Error;

/// Errors raised by tensor construction, graph operations and the binary format.
#[derive(Debug, Error)]
pub enum TensorError {
    /// Shapes or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),
    /// A forward pass produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("uninitialized running statistics for '{0}'")]
    UninitializedStats(String),
    #[error("missing gradients for parameters: {}", .0.join(", "))]
    MissingGrad(Vec<String>),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> TensorError {
    TensorError::Config(msg.into())
}
