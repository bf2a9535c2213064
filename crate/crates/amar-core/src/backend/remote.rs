//! HTTP backend speaking a minimal chat-style wire format.
//!
//! Request body: `{"model", "messages": [{"role", "content": [{"type":
//! "text"|"image", "data": ...}]}]}`. Image parts are read from disk and
//! base64-encoded at request time. Response body: `{"text": ...}`; embedding
//! responses carry the vector as a JSON array inside that text field.

use std::time::Duration;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use crate::error::{AmarError, Result};
use crate::index::EmbeddingVector;

use super::{Backend, BackendConfig, Gate, ModelRequest, Purpose, RequestPart};

const ATTEMPTS: usize = 3;
const BACKOFF_BASE_MS: u64 = 200;

pub struct RemoteBackend {
    endpoint: String,
    model_id: String,
    api_key_env: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig) -> Result<RemoteBackend> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| AmarError::InvalidBackendConfig("remote endpoint missing".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| AmarError::BackendRequest(e.to_string()))?;
        Ok(RemoteBackend {
            endpoint,
            model_id: config.model_id.clone(),
            api_key_env: config.api_key_env.clone(),
            client,
            gate: Gate::new(config.max_concurrency),
        })
    }

    fn api_key(&self) -> Result<String> {
        std::env::var(&self.api_key_env)
            .map_err(|_| AmarError::MissingApiKey(self.api_key_env.clone()))
    }

    fn wire_content(&self, request: &ModelRequest) -> Result<Vec<serde_json::Value>> {
        request
            .parts
            .iter()
            .map(|part| match part {
                RequestPart::Text(t) => Ok(json!({ "type": "text", "data": t })),
                RequestPart::ImageRef(path) => {
                    let bytes = std::fs::read(path).map_err(|e| AmarError::io(path, e))?;
                    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
                    Ok(json!({ "type": "image", "data": encoded }))
                }
            })
            .collect()
    }

    fn round_trip(&self, request: &ModelRequest) -> Result<String> {
        // key check happens before any network traffic
        let key = self.api_key()?;
        let body = json!({
            "model": self.model_id,
            "messages": [{ "role": "user", "content": self.wire_content(request)? }],
        });
        let _slot = self.gate.acquire();
        let mut last_error = AmarError::BackendRequest("no attempt made".into());
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1)));
            }
            let sent = self
                .client
                .post(&self.endpoint)
                .bearer_auth(&key)
                .json(&body)
                .send();
            match sent {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let parsed: WireResponse = response
                            .json()
                            .map_err(|e| AmarError::BackendRequest(e.to_string()))?;
                        return Ok(parsed.text);
                    }
                    last_error = AmarError::BackendStatus(status.as_u16());
                    if !status.is_server_error() {
                        return Err(last_error);
                    }
                }
                Err(e) => {
                    let transient = e.is_timeout() || e.is_connect() || e.is_request();
                    last_error = AmarError::BackendRequest(e.to_string());
                    if !transient {
                        return Err(last_error);
                    }
                }
            }
        }
        Err(last_error)
    }
}

impl Backend for RemoteBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ModelRequest) -> Result<String> {
        request.validate()?;
        self.round_trip(request)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(AmarError::EmptyEmbedText);
        }
        let request = ModelRequest::text(Purpose::Embed, text);
        let raw = self.round_trip(&request)?;
        let values: Vec<f64> = serde_json::from_str(raw.trim()).map_err(|e| {
            AmarError::BackendRequest(format!("embedding response is not a number array: {e}"))
        })?;
        EmbeddingVector::new(values)
    }
}
