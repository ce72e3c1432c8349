use geowine_core::GeoError;
use geowine_kg::KgError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Startup,
    Request,
    Provider,
    Decode,
    EntityQuery,
    Media,
    Embedding,
    Ranking,
    News,
    Events,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Startup => "startup",
            Stage::Request => "request",
            Stage::Provider => "provider",
            Stage::Decode => "decode",
            Stage::EntityQuery => "entity_query",
            Stage::Media => "media",
            Stage::Embedding => "embedding",
            Stage::Ranking => "ranking",
            Stage::News => "news",
            Stage::Events => "events",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    NotFound,
    Config,
    Provider,
    Decode,
    Transport,
    UpstreamMalformed,
    OfflineMiss,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage}: {message}", stage = self.stage.name())]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub stage: Stage,
    pub message: String,
}

/// JSON error body: `{code, message, stage}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: String,
    pub message: String,
    pub stage: Stage,
}

impl ServiceError {
    pub fn new(kind: ErrorKind, stage: Stage, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage,
            message: message.into(),
        }
    }

    pub fn validation(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, stage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, Stage::Startup, message)
    }

    pub fn internal(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, stage, message)
    }

    pub fn from_kg(stage: Stage, e: KgError) -> Self {
        let kind = match &e {
            KgError::Validation(_) => ErrorKind::Validation,
            KgError::Config(_) => ErrorKind::Config,
            KgError::Transport(t) if t.is_not_recorded() => ErrorKind::OfflineMiss,
            KgError::Transport(_) => ErrorKind::Transport,
            KgError::Parse(_) => ErrorKind::UpstreamMalformed,
        };
        Self::new(kind, stage, e.to_string())
    }

    pub fn from_geo(stage: Stage, e: GeoError) -> Self {
        let kind = match &e {
            GeoError::Validation(_) => ErrorKind::Validation,
            GeoError::Io(_) => ErrorKind::Internal,
            _ if stage == Stage::Decode => ErrorKind::Decode,
            _ => ErrorKind::Internal,
        };
        Self::new(kind, stage, e.to_string())
    }

    /// Machine-readable code; distinct per error kind.
    pub fn code(&self) -> &'static str {
        match self.kind {
            ErrorKind::Validation => "invalid_request",
            ErrorKind::NotFound => "not_found",
            ErrorKind::Config => "configuration_error",
            ErrorKind::Provider => "provider_failed",
            ErrorKind::Decode => "decode_failed",
            ErrorKind::Transport => "upstream_unavailable",
            ErrorKind::UpstreamMalformed => "upstream_malformed",
            ErrorKind::OfflineMiss => "offline_not_recorded",
            ErrorKind::Internal => "internal_error",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self.kind {
            ErrorKind::Validation => 400,
            ErrorKind::NotFound => 404,
            ErrorKind::Provider | ErrorKind::Transport | ErrorKind::UpstreamMalformed => 502,
            ErrorKind::OfflineMiss => 503,
            ErrorKind::Config | ErrorKind::Decode | ErrorKind::Internal => 500,
        }
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        ErrorEnvelope {
            code: self.code().to_string(),
            message: self.message.clone(),
            stage: self.stage,
        }
    }
}
