use thiserror::Error;

/// Crate-wide error type. Variants map onto the distinct failure families
/// surfaced by the CLI exit codes (config / file / contract).
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of its documented domain.
    #[error("invalid config: {0}")]
    Config(String),

    /// An API precondition was violated (missing gradient, non-scalar loss,
    /// class absent from labels, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Episode sampling could not satisfy the requested way/shot.
    #[error("episode sampling failed: {0}")]
    Episode(String),

    /// A dataset or checkpoint file is malformed.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
