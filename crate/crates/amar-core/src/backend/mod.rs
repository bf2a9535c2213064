//! Pluggable model access: completion, embedding, and the request/response
//! plumbing shared by every stage.
//!
//! Two implementations ship here. [`MockBackend`] is a pure function of
//! (request, seed) and powers the offline test and acceptance paths.
//! [`RemoteBackend`] speaks a minimal chat-style HTTP wire format. Either can
//! be wrapped in [`CachedBackend`] for an append-only response cache.

mod cache;
mod mock;
mod remote;

pub use cache::CachedBackend;
pub use mock::MockBackend;
pub use remote::RemoteBackend;

use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AmarError, Result};
use crate::index::EmbeddingVector;

/// Default environment variable holding the remote API key.
pub const DEFAULT_API_KEY_ENV: &str = "AMAR_API_KEY";

/// Default mock embedding dimension.
pub const DEFAULT_EMBED_DIMENSION: usize = 64;

/// What a request is for. Mock responses are dispatched on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Plan,
    Extract,
    Generate,
    Score,
    Judge,
    Embed,
}

impl Purpose {
    pub fn label(self) -> &'static str {
        match self {
            Purpose::Plan => "plan",
            Purpose::Extract => "extract",
            Purpose::Generate => "generate",
            Purpose::Score => "score",
            Purpose::Judge => "judge",
            Purpose::Embed => "embed",
        }
    }
}

/// One part of a model request. Images travel as opaque references and are
/// resolved (to base64 payloads) only by the remote backend at request time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum RequestPart {
    Text(String),
    #[serde(rename = "image")]
    ImageRef(String),
}

/// An ordered multimodal request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub purpose: Purpose,
    pub parts: Vec<RequestPart>,
}

impl ModelRequest {
    pub fn text(purpose: Purpose, text: impl Into<String>) -> Self {
        ModelRequest {
            purpose,
            parts: vec![RequestPart::Text(text.into())],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(AmarError::InvalidRequest("request has no parts".into()));
        }
        if self.purpose == Purpose::Embed {
            let single_text =
                self.parts.len() == 1 && matches!(self.parts[0], RequestPart::Text(_));
            if !single_text {
                return Err(AmarError::InvalidRequest(
                    "embed requests must consist of a single text part".into(),
                ));
            }
        }
        Ok(())
    }

    /// Canonical serialization used for cache keys and mock seeding. Part
    /// text is preserved verbatim (whitespace included) and length-prefixed,
    /// so identical logical requests share a key and nothing else does.
    pub fn canonical(&self) -> String {
        let mut out = format!("purpose:{}", self.purpose.label());
        for part in &self.parts {
            match part {
                RequestPart::Text(t) => {
                    out.push_str(&format!("\nt:{}:", t.len()));
                    out.push_str(t);
                }
                RequestPart::ImageRef(r) => {
                    out.push_str(&format!("\ni:{}:", r.len()));
                    out.push_str(r);
                }
            }
        }
        out
    }

    /// Stable digest of the canonical form.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical().as_bytes());
        hex(&hasher.finalize())
    }

    pub fn has_image(&self) -> bool {
        self.parts.iter().any(|p| matches!(p, RequestPart::ImageRef(_)))
    }

    /// All text parts joined with newlines, for prompt traces.
    pub fn text_joined(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                RequestPart::Text(t) => Some(t.as_str()),
                RequestPart::ImageRef(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// First image reference, if any.
    pub fn image_ref(&self) -> Option<&str> {
        self.parts.iter().find_map(|p| match p {
            RequestPart::ImageRef(r) => Some(r.as_str()),
            RequestPart::Text(_) => None,
        })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Model access used by every stage of the engine.
pub trait Backend: Send + Sync {
    /// Identifier of the underlying model, used in run records and for the
    /// judge-differs-from-generator guard.
    fn model_id(&self) -> &str;

    /// Single completion round trip.
    fn complete(&self, request: &ModelRequest) -> Result<String>;

    /// Embed one non-empty text into the shared representation space.
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Which implementation a backend config selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
}

/// Declarative configuration for one backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Mock seed override; falls back to the engine seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Embedding dimension of the mock backend.
    #[serde(default = "default_dimension")]
    pub dimension: usize,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_max_concurrency() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_dimension() -> usize {
    DEFAULT_EMBED_DIMENSION
}

impl BackendConfig {
    pub fn mock(model_id: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            model_id: model_id.into(),
            endpoint: None,
            api_key_env: default_api_key_env(),
            max_concurrency: default_max_concurrency(),
            timeout_secs: default_timeout_secs(),
            seed: None,
            dimension: default_dimension(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(AmarError::InvalidBackendConfig("model_id is empty".into()));
        }
        if self.kind == BackendKind::Remote && self.endpoint.is_none() {
            return Err(AmarError::InvalidBackendConfig(format!(
                "remote backend `{}` needs an endpoint",
                self.model_id
            )));
        }
        if self.max_concurrency == 0 {
            return Err(AmarError::InvalidBackendConfig(
                "max_concurrency must be >= 1".into(),
            ));
        }
        if self.dimension == 0 {
            return Err(AmarError::InvalidBackendConfig(
                "dimension must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Instantiate this config. Mock backends need a resolved seed; remote
    /// backends get wrapped in the response cache when one is configured.
    pub fn build(&self, engine_seed: Option<u64>, cache_path: Option<&Path>) -> Result<Arc<dyn Backend>> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => {
                let seed = self.seed.or(engine_seed).ok_or(AmarError::MissingSeed)?;
                Ok(Arc::new(
                    MockBackend::new(&self.model_id, seed).with_dimension(self.dimension),
                ))
            }
            BackendKind::Remote => {
                let remote: Arc<dyn Backend> = Arc::new(RemoteBackend::new(self)?);
                match cache_path {
                    Some(path) => Ok(Arc::new(CachedBackend::open(path, remote)?)),
                    None => Ok(remote),
                }
            }
        }
    }
}

/// Per-role backend configuration of the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub planner: BackendConfig,
    pub generator: BackendConfig,
    pub embedder: BackendConfig,
    pub scorer: BackendConfig,
    pub judge: BackendConfig,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig {
            planner: BackendConfig::mock("mock-planner"),
            generator: BackendConfig::mock("mock-generator"),
            embedder: BackendConfig::mock("mock-embedder"),
            scorer: BackendConfig::mock("mock-scorer"),
            judge: BackendConfig::mock("mock-judge"),
        }
    }
}

impl BackendsConfig {
    pub fn all_mock(&self) -> bool {
        [
            &self.planner,
            &self.generator,
            &self.embedder,
            &self.scorer,
            &self.judge,
        ]
        .iter()
        .all(|c| c.kind == BackendKind::Mock)
    }

    pub fn any_mock(&self) -> bool {
        [
            &self.planner,
            &self.generator,
            &self.embedder,
            &self.scorer,
            &self.judge,
        ]
        .iter()
        .any(|c| c.kind == BackendKind::Mock)
    }
}

/// Instantiated backends for every pipeline role.
#[derive(Clone)]
pub struct BackendSet {
    pub planner: Arc<dyn Backend>,
    pub generator: Arc<dyn Backend>,
    pub embedder: Arc<dyn Backend>,
    pub scorer: Arc<dyn Backend>,
    pub judge: Arc<dyn Backend>,
    deterministic: bool,
}

impl BackendSet {
    pub fn from_config(
        config: &BackendsConfig,
        engine_seed: Option<u64>,
        cache_path: Option<&Path>,
    ) -> Result<BackendSet> {
        if config.any_mock() && engine_seed.is_none()
            && [
                &config.planner,
                &config.generator,
                &config.embedder,
                &config.scorer,
                &config.judge,
            ]
            .iter()
            .any(|c| c.kind == BackendKind::Mock && c.seed.is_none())
        {
            return Err(AmarError::MissingSeed);
        }
        Ok(BackendSet {
            planner: config.planner.build(engine_seed, cache_path)?,
            generator: config.generator.build(engine_seed, cache_path)?,
            embedder: config.embedder.build(engine_seed, cache_path)?,
            scorer: config.scorer.build(engine_seed, cache_path)?,
            judge: config.judge.build(engine_seed, cache_path)?,
            deterministic: config.all_mock(),
        })
    }

    /// Build an all-mock set sharing one seed. Test and fixture helper.
    pub fn mock(seed: u64) -> BackendSet {
        BackendSet::from_config(&BackendsConfig::default(), Some(seed), None)
            .expect("default mock set is valid")
    }

    /// True when every backend is a mock, i.e. the whole pipeline is a pure
    /// function of its inputs and the seed.
    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }
}

/// Counting gate bounding concurrent backend calls.
pub(crate) struct Gate {
    capacity: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    pub(crate) fn new(capacity: usize) -> Gate {
        Gate {
            capacity: capacity.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> GateGuard<'_> {
        let mut count = self.in_flight.lock().expect("gate lock");
        while *count >= self.capacity {
            count = self.freed.wait(count).expect("gate wait");
        }
        *count += 1;
        GateGuard { gate: self }
    }
}

pub(crate) struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.in_flight.lock().expect("gate lock");
        *count -= 1;
        self.gate.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalization_is_stable_and_whitespace_sensitive() {
        let a = ModelRequest::text(Purpose::Generate, "hello  world");
        let b = ModelRequest::text(Purpose::Generate, "hello  world");
        let c = ModelRequest::text(Purpose::Generate, "hello world");
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn purposes_disambiguate_digests() {
        let a = ModelRequest::text(Purpose::Plan, "same");
        let b = ModelRequest::text(Purpose::Generate, "same");
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn part_boundaries_are_unambiguous() {
        let a = ModelRequest {
            purpose: Purpose::Generate,
            parts: vec![
                RequestPart::Text("ab".into()),
                RequestPart::Text("c".into()),
            ],
        };
        let b = ModelRequest {
            purpose: Purpose::Generate,
            parts: vec![
                RequestPart::Text("a".into()),
                RequestPart::Text("bc".into()),
            ],
        };
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn embed_requests_must_be_single_text() {
        let bad = ModelRequest {
            purpose: Purpose::Embed,
            parts: vec![
                RequestPart::Text("a".into()),
                RequestPart::ImageRef("x.png".into()),
            ],
        };
        assert!(bad.validate().is_err());
        let ok = ModelRequest::text(Purpose::Embed, "a");
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn remote_config_requires_endpoint() {
        let mut cfg = BackendConfig::mock("m");
        cfg.kind = BackendKind::Remote;
        assert!(matches!(
            cfg.validate().unwrap_err(),
            AmarError::InvalidBackendConfig(_)
        ));
    }

    #[test]
    fn mock_set_requires_seed() {
        match BackendSet::from_config(&BackendsConfig::default(), None, None) {
            Err(AmarError::MissingSeed) => {}
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("seedless mock set must be rejected"),
        }
    }
}
