use thiserror::Error;

use crate::transport::TransportError;

pub type Result<T, E = KgError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KgError {
    #[error("validation error: {0}")]
    Validation(String),

    /// Missing or inconsistent client configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Transport(#[from] TransportError),

    /// The endpoint answered with a body we could not interpret.
    #[error("malformed response: {0}")]
    Parse(String),
}

impl From<geowine_core::GeoError> for KgError {
    fn from(e: geowine_core::GeoError) -> Self {
        KgError::Validation(e.to_string())
    }
}

impl KgError {
    /// True when an offline transport had no recording for the request.
    pub fn is_not_recorded(&self) -> bool {
        matches!(self, KgError::Transport(t) if t.is_not_recorded())
    }
}
