//! HTTP front end for interactive search sessions.
//!
//! Routes:
//! - `POST /sessions` starts a session from a vector or, through the
//!   embedding bridge, from text.
//! - `GET /sessions/{id}/next` returns the next batch of unseen images.
//! - `POST /sessions/{id}/feedback` records box feedback and refines.
//! - `GET /images/{id}` serves image bytes from the stored uri.
//!
//! Sessions live in memory and expire after an idle timeout. Requests on one
//! session are serialized by a per-session lock; the database is shared
//! read-only.

mod api;
pub mod bridge;
pub mod error;
mod sessions;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;
use patchscope_core::{ExactScan, PatchSearch, SessionConfig, VectorDatabase};

pub use api::{
    CreateSessionRequest, CreateSessionResponse, ExampleCounts, FeedbackRequest, FeedbackResponse, NextResponse,
    ShownImage,
};
pub use bridge::{BridgeClient, BridgeError};
pub use error::ApiError;
pub use sessions::SessionTable;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    /// Defaults for new sessions; requests may override `k` and the mode.
    pub session: SessionConfig,
    pub bridge_url: Option<String>,
    pub bridge_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            session: SessionConfig::default(),
            bridge_url: None,
            bridge_timeout: Duration::from_secs(10),
        }
    }
}

pub struct AppState {
    pub db: Arc<VectorDatabase>,
    pub search: Arc<dyn PatchSearch>,
    pub sessions: SessionTable,
    pub bridge: Option<BridgeClient>,
    pub config: ServiceConfig,
    http: reqwest::Client,
}

impl AppState {
    pub fn new(db: VectorDatabase, config: ServiceConfig) -> Result<Self, BridgeError> {
        Self::with_search(Arc::new(db), Arc::new(ExactScan), config)
    }

    pub fn with_search(
        db: Arc<VectorDatabase>,
        search: Arc<dyn PatchSearch>,
        config: ServiceConfig,
    ) -> Result<Self, BridgeError> {
        let bridge = match &config.bridge_url {
            Some(url) => Some(BridgeClient::new(url.clone(), config.bridge_timeout)?),
            None => None,
        };
        Ok(Self {
            db,
            search,
            sessions: SessionTable::new(config.idle_timeout),
            bridge,
            config,
            http: reqwest::Client::new(),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}/next", get(api::next_batch))
        .route("/sessions/{id}/feedback", post(api::feedback))
        .route("/images/{id}", get(api::image_bytes))
        .with_state(state)
}

/// Drops idle sessions periodically until the runtime shuts down.
pub fn spawn_reaper(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.config.idle_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = state.sessions.sweep().await;
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    })
}

/// Serves until the listener fails.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "listening on {} ({} images, {} patches)",
        listener.local_addr()?,
        state.db.image_count(),
        state.db.patch_count()
    );
    spawn_reaper(state.clone());
    axum::serve(listener, router(state)).await
}
