//! Client for the external text-embedding sidecar.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("no embedding bridge configured")]
    NotConfigured,
    #[error("embedding bridge request failed: {0}")]
    Request(#[from] reqwest::Error),
    #[error("embedding bridge returned {status}: {body}")]
    Status { status: u16, body: String },
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vector: Vec<f32>,
}

/// Calls `POST {base}/embed_text` with `{"text": ...}` and expects
/// `{"vector": [...]}`.
#[derive(Clone, Debug)]
pub struct BridgeClient {
    base: String,
    http: reqwest::Client,
}

impl BridgeClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, BridgeError> {
        let http = reqwest::Client::builder().timeout(timeout).build()?;
        Ok(Self { base: base_url.into().trim_end_matches('/').to_string(), http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn embed_text(&self, text: &str) -> Result<Vec<f32>, BridgeError> {
        let resp = self.http.post(format!("{}/embed_text", self.base)).json(&EmbedRequest { text }).send().await?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(BridgeError::Status { status: status.as_u16(), body });
        }
        Ok(resp.json::<EmbedResponse>().await?.vector)
    }
}
