use thiserror::Error;

pub type Result<T, E = GeoError> = std::result::Result<T, E>;

/// Errors raised by the pure geospatial, decoding and ranking code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    /// A value violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Vector lengths or level counts did not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Two embeddings of different kinds (or the wrong kind) were combined.
    #[error("embedding type error: {0}")]
    Type(String),

    /// A zero-norm vector was used where a direction is required.
    #[error("degenerate vector: {0}")]
    Degenerate(String),

    /// A file could not be parsed. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl GeoError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::Shape(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: msg.into(),
        }
    }
}

impl From<std::io::Error> for GeoError {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err.to_string())
    }
}
