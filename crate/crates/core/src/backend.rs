//! Text → vector providers.
//!
//! Two backends implement [`EmbeddingBackend`]: a client for
//! OpenAI-compatible `/embeddings` endpoints, and a deterministic mock that
//! needs no network. The mock is a bag-of-tokens hash embedding:
//!
//! 1. lowercase the text and split on every non-alphanumeric character;
//! 2. seed splitmix64 with the 64-bit FNV-1a hash of each distinct token and
//!    draw `dim` values `2·(u/2^64) − 1`;
//! 3. sum the token vectors weighted by token count (in sorted token
//!    order) and normalize.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{fnv1a64, SplitMix64};
use crate::vector::{normalize, Vector, VectorError};

pub const DEFAULT_MODEL: &str = "text-embedding-3-small";
pub const DEFAULT_MOCK_DIM: usize = 256;
const MIN_MOCK_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("text to embed is empty")]
    EmptyText,
    #[error("text contains no alphanumeric tokens")]
    NoTokens,
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("request failed: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Embedding function `text → vector`.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vector, BackendError>;

    /// Short backend identifier recorded as store provenance.
    fn kind(&self) -> &str;

    fn model_name(&self) -> &str;

    /// Upper bound on concurrent `embed` calls during a store build.
    fn max_in_flight(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key, never the key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub mock_dim: usize,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: None,
            model_name: DEFAULT_MODEL.to_owned(),
            api_key_env: None,
            timeout_secs: 30,
            mock_dim: DEFAULT_MOCK_DIM,
            max_in_flight: 4,
        }
    }
}

impl BackendConfig {
    pub fn mock(dim: usize) -> Self {
        Self { mock_dim: dim, ..Self::default() }
    }

    pub fn remote(endpoint_url: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint_url: Some(endpoint_url.into()),
            api_key_env: Some(api_key_env.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Mock if self.mock_dim < MIN_MOCK_DIM => {
                Err(BackendError::Config(format!("mock_dim must be at least {MIN_MOCK_DIM}")))
            }
            BackendKind::Remote if self.endpoint_url.as_deref().is_none_or(str::is_empty) => {
                Err(BackendError::Config("remote backend requires endpoint_url".into()))
            }
            BackendKind::Remote if self.api_key_env.as_deref().is_none_or(str::is_empty) => {
                Err(BackendError::Config("remote backend requires api_key_env".into()))
            }
            _ if self.max_in_flight == 0 => Err(BackendError::Config("max_in_flight must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingBackend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockBackend::new(self.mock_dim)),
            BackendKind::Remote => Box::new(RemoteBackend::from_config(self)?),
        })
    }
}

/// Deterministic offline backend; see the module docs for the construction.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dim: usize,
}

impl MockBackend {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lowercased alphanumeric tokens with their counts.
    pub fn tokens(text: &str) -> BTreeMap<String, u32> {
        let mut counts = BTreeMap::new();
        for token in text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            *counts.entry(token.to_owned()).or_insert(0) += 1;
        }
        counts
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = SplitMix64::new(fnv1a64(token.as_bytes()));
        (0..self.dim).map(|_| rng.next_signed_unit()).collect()
    }
}

impl EmbeddingBackend for MockBackend {
    fn embed(&self, text: &str) -> Result<Vector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        let tokens = Self::tokens(text);
        if tokens.is_empty() {
            return Err(BackendError::NoTokens);
        }
        let mut sum = vec![0.0; self.dim];
        for (token, count) in &tokens {
            let weight = f64::from(*count);
            for (acc, x) in sum.iter_mut().zip(self.token_vector(token)) {
                *acc += weight * x;
            }
        }
        let unit = normalize(&Vector::new(sum)?)?;
        Ok(unit.to_vector())
    }

    fn kind(&self) -> &str {
        "mock"
    }

    fn model_name(&self) -> &str {
        "mock-fnv1a-splitmix64"
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

/// Client for OpenAI-compatible embedding endpoints. Texts are sent
/// verbatim; a failed call is retried once after `retry_delay` when the
/// failure is transient (transport error, 429 or 5xx).
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
    max_in_flight: usize,
    retry_delay: Duration,
}

impl RemoteBackend {
    const ATTEMPTS: usize = 2;

    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let var = config.api_key_env.clone().unwrap_or_default();
        let api_key = std::env::var(&var).map_err(|_| BackendError::MissingApiKey(var))?;
        Ok(Self::new(
            config.endpoint_url.clone().unwrap_or_default(),
            config.model_name.clone(),
            api_key,
            Duration::from_secs(config.timeout_secs),
        )
        .with_max_in_flight(config.max_in_flight))
    }

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            agent,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            max_in_flight: 4,
            retry_delay: Duration::from_secs(1),
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_retry_delay(mut self, delay: Duration) -> Self {
        self.retry_delay = delay;
        self
    }

    fn request(&self, text: &str) -> Result<Vector, BackendError> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(EmbeddingRequest { model: &self.model, input: text })
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body });
        }
        let parsed: EmbeddingResponse =
            serde_json::from_str(&body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let item = parsed
            .data
            .into_iter()
            .find(|item| item.index == 0)
            .ok_or_else(|| BackendError::MalformedResponse("no embedding with index 0".into()))?;
        let v = Vector::new(item.embedding).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        normalize(&v).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        Ok(v)
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn embed(&self, text: &str) -> Result<Vector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        let mut attempt = 1;
        loop {
            match self.request(text) {
                Err(e) if e.is_retryable() && attempt < Self::ATTEMPTS => {
                    attempt += 1;
                    std::thread::sleep(self.retry_delay);
                }
                result => return result,
            }
        }
    }

    fn kind(&self) -> &str {
        "remote"
    }

    fn model_name(&self) -> &str {
        &self.model
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
