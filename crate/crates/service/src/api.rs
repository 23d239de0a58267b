use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::header::CONTENT_TYPE;
use axum::response::{IntoResponse, Response};
use axum::Json;
use patchscope_core::{EmbeddingVector, FeedbackEvent, ImageId, PatchBox, RerankConfig, ScoringMode, SessionState};
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeError;
use crate::error::ApiError;
use crate::AppState;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_vector: Option<Vec<f32>>,
    /// Used only when `query_vector` is absent; embedded by the bridge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShownImage {
    pub image_id: ImageId,
    pub uri: String,
    pub score: f64,
    pub best_box: PatchBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub images: Vec<ShownImage>,
    pub round: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub events: Vec<FeedbackEvent>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleCounts {
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub updated: bool,
    /// Examples added by this submission.
    pub examples: ExampleCounts,
    /// Examples accumulated over the whole session.
    pub totals: ExampleCounts,
}

pub(crate) async fn create_session(
    State(app): State<Arc<AppState>>,
    Json(req): Json<CreateSessionRequest>,
) -> Result<Json<CreateSessionResponse>, ApiError> {
    let mut cfg = app.config.session;
    cfg.rerank = RerankConfig {
        k: req.k.unwrap_or(cfg.rerank.k),
        mode: match &req.mode {
            Some(m) => m.parse::<ScoringMode>()?,
            None => cfg.rerank.mode,
        },
        ..cfg.rerank
    };
    let vector = match (req.query_vector, req.query_text) {
        (Some(v), _) => v,
        (None, Some(text)) => {
            let bridge = app.bridge.as_ref().ok_or(BridgeError::NotConfigured)?;
            bridge.embed_text(&text).await?
        }
        (None, None) => return Err(ApiError::bad_request("query_vector or query_text is required")),
    };
    let state = SessionState::start(&app.db, &EmbeddingVector::new(vector), cfg)?;
    let session_id = app.sessions.insert(state).await;
    Ok(Json(CreateSessionResponse { session_id }))
}

fn unknown_session(id: &str) -> ApiError {
    ApiError::not_found(format!("unknown session {id:?}"))
}

pub(crate) async fn next_batch(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<NextResponse>, ApiError> {
    let mut session = app.sessions.lock(&id).await.ok_or_else(|| unknown_session(&id))?;
    let worker = app.clone();
    // ranking is CPU bound; the session lock travels with it
    let resp = tokio::task::spawn_blocking(move || -> Result<NextResponse, ApiError> {
        let batch = session.next_batch_with(worker.search.as_ref(), &worker.db)?;
        let images = batch
            .into_iter()
            .map(|r| ShownImage {
                image_id: r.image_id,
                uri: worker.db.image(r.image_id).map(|i| i.uri.clone()).unwrap_or_default(),
                score: r.adjusted_score,
                best_box: r.best_box,
            })
            .collect();
        Ok(NextResponse { images, round: session.round })
    })
    .await
    .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}

pub(crate) async fn feedback(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<FeedbackRequest>,
) -> Result<Json<FeedbackResponse>, ApiError> {
    let mut session = app.sessions.lock(&id).await.ok_or_else(|| unknown_session(&id))?;
    let worker = app.clone();
    let resp = tokio::task::spawn_blocking(move || -> Result<FeedbackResponse, ApiError> {
        let added = session.apply_feedback(&worker.db, &req.events)?;
        Ok(FeedbackResponse {
            updated: true,
            examples: ExampleCounts { positives: added.positives, negatives: added.negatives },
            totals: ExampleCounts {
                positives: session.examples.positives.len(),
                negatives: session.examples.negatives.len(),
            },
        })
    })
    .await
    .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}

fn content_type(path: &str) -> &'static str {
    let ext = path.rsplit('.').next().unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "jpg" | "jpeg" => "image/jpeg",
        "png" => "image/png",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// Streams the bytes behind an image's uri: plain paths and `file://` are
/// read from disk, `http(s)://` is fetched.
pub(crate) async fn image_bytes(
    State(app): State<Arc<AppState>>,
    Path(id): Path<ImageId>,
) -> Result<Response, ApiError> {
    let uri = app.db.image(id).ok_or_else(|| ApiError::not_found(format!("unknown image {id}")))?.uri.clone();
    if uri.starts_with("http://") || uri.starts_with("https://") {
        let resp = app
            .http
            .get(&uri)
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(|e| ApiError::new(axum::http::StatusCode::BAD_GATEWAY, format!("fetching {uri}: {e}")))?;
        let ctype = resp
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
            .unwrap_or_else(|| content_type(&uri).to_string());
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| ApiError::new(axum::http::StatusCode::BAD_GATEWAY, format!("fetching {uri}: {e}")))?;
        return Ok(([(CONTENT_TYPE, ctype)], bytes).into_response());
    }
    let path = match uri.strip_prefix("file://") {
        Some(p) => PathBuf::from(p),
        None if !uri.contains("://") && !uri.is_empty() => PathBuf::from(&uri),
        None => return Err(ApiError::not_found(format!("image {id} has no readable uri ({uri:?})"))),
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::not_found(format!("image {id}: {}: {e}", path.display())))?;
    Ok(([(CONTENT_TYPE, content_type(&uri).to_string())], bytes).into_response())
}
