//! JSON HTTP API.
//!
//! - `POST /api/retrieve`: JSON (`image_base64` or `preset`) or multipart
//!   (`image` file part, or `preset`; plus `radius_km` and `groups`).
//! - `GET /api/entity/{qid}/context`
//! - `GET /api/presets`, `GET /api/presets/{id}/image`
//! - `GET /api/health`
//!
//! Errors are answered with `{code, message, stage}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{ErrorKind, ServiceError, Stage};
use crate::pipeline::{ImageSource, RetrievalRequest, Services, MAX_IMAGE_BYTES};

pub type AppState = Arc<Services>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/retrieve", post(retrieve))
        .route("/api/entity/{qid}/context", get(entity_context))
        .route("/api/presets", get(presets))
        .route("/api/presets/{id}/image", get(preset_image))
        .route("/api/health", get(health))
        .fallback(not_found)
        // Base64 inflates uploads by a third; the decoded size is checked later.
        .layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES * 3 / 2 + 64 * 1024))
        .with_state(state)
}

/// Serializes `value` as the response body. Struct field order fixes the key
/// order, so equal values give byte-identical bodies.
fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match serde_json::to_vec(value) {
        Ok(body) => (
            status,
            [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
            body,
        )
            .into_response(),
        Err(e) => error_response(&ServiceError::internal(Stage::Request, e.to_string())),
    }
}

pub fn error_response(e: &ServiceError) -> Response {
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if status.is_server_error() {
        tracing::error!("{e}");
    }
    json(status, &e.envelope())
}

fn bad_request(message: impl Into<String>) -> ServiceError {
    ServiceError::validation(Stage::Request, message)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveJson {
    #[serde(default)]
    image_base64: Option<String>,
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    radius_km: Option<f64>,
    #[serde(default)]
    groups: Option<Vec<String>>,
}

fn image_source(upload: Option<Vec<u8>>, preset: Option<String>) -> Result<ImageSource, ServiceError> {
    match (upload, preset) {
        (Some(_), Some(_)) => Err(bad_request("send either an image or a preset, not both")),
        (Some(bytes), None) => Ok(ImageSource::Upload(bytes)),
        (None, Some(id)) => Ok(ImageSource::Preset(id)),
        (None, None) => Err(bad_request("an image or a preset is required")),
    }
}

fn parse_json_request(body: &[u8]) -> Result<RetrievalRequest, ServiceError> {
    let req: RetrieveJson =
        serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed JSON body: {e}")))?;
    let upload = req
        .image_base64
        .map(|s| {
            // Accept data URLs as produced by browsers.
            let payload = match s.split_once(";base64,") {
                Some((_, p)) => p,
                None => s.as_str(),
            };
            base64::engine::general_purpose::STANDARD
                .decode(payload.trim())
                .map_err(|e| bad_request(format!("image_base64 is not valid base64: {e}")))
        })
        .transpose()?;
    Ok(RetrievalRequest {
        image: image_source(upload, req.preset)?,
        radius_km: req.radius_km,
        groups: req.groups,
    })
}

async fn parse_multipart(mut mp: Multipart) -> Result<RetrievalRequest, ServiceError> {
    let mut upload = None;
    let mut preset = None;
    let mut radius_km = None;
    let mut groups: Option<Vec<String>> = None;
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| bad_request(format!("multipart field `{name}`: {e}")))?;
        let text = || {
            std::str::from_utf8(&data)
                .map(|s| s.trim().to_string())
                .map_err(|_| bad_request(format!("field `{name}` is not UTF-8")))
        };
        match name.as_str() {
            "image" => upload = Some(data.to_vec()),
            "preset" => preset = Some(text()?),
            "radius_km" => {
                let t = text()?;
                radius_km = Some(
                    t.parse::<f64>()
                        .map_err(|_| bad_request(format!("radius_km `{t}` is not a number")))?,
                );
            }
            // Repeated fields or one comma-separated value.
            "groups" | "groups[]" => groups.get_or_insert_with(Vec::new).extend(
                text()?
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string),
            ),
            other => return Err(bad_request(format!("unexpected multipart field `{other}`"))),
        }
    }
    Ok(RetrievalRequest {
        image: image_source(upload, preset)?,
        radius_km,
        groups,
    })
}

async fn retrieve(State(state): State<AppState>, req: Request) -> Response {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_ascii_lowercase();
    let parsed = if content_type.starts_with("multipart/form-data") {
        match Multipart::from_request(req, &()).await {
            Ok(mp) => parse_multipart(mp).await,
            Err(e) => Err(bad_request(e.body_text())),
        }
    } else if content_type.is_empty() || content_type.starts_with("application/json") {
        match Bytes::from_request(req, &()).await {
            Ok(body) => parse_json_request(&body),
            Err(e) => Err(bad_request(e.body_text())),
        }
    } else {
        Err(bad_request(format!("unsupported content type `{content_type}`")))
    };
    let result = match parsed {
        Ok(r) => state.retrieve(r).await,
        Err(e) => Err(e),
    };
    match result {
        Ok(resp) => json(StatusCode::OK, &resp),
        Err(e) => error_response(&e),
    }
}

async fn entity_context(State(state): State<AppState>, Path(qid): Path<String>) -> Response {
    match state.entity_context(&qid).await {
        Ok(ctx) => json(StatusCode::OK, &ctx),
        Err(e) => error_response(&e),
    }
}

#[derive(Serialize)]
struct PresetList {
    presets: Vec<crate::presets::PresetSummary>,
}

async fn presets(State(state): State<AppState>) -> Response {
    json(
        StatusCode::OK,
        &PresetList {
            presets: state.presets.summaries(),
        },
    )
}

async fn preset_image(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.presets.get(&id) {
        Some(p) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, HeaderValue::from_static(p.content_type))],
            p.image_bytes.clone(),
        )
            .into_response(),
        None => error_response(&ServiceError::new(
            ErrorKind::NotFound,
            Stage::Request,
            format!("unknown preset `{id}`"),
        )),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    json(StatusCode::OK, &state.health().await)
}

async fn not_found() -> Response {
    error_response(&ServiceError::new(ErrorKind::NotFound, Stage::Request, "no such route"))
}
