//! JSON application config with `backend`, `session` and `service` sections.
//! Every field has a default, so `{}` is a valid config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use texhand_core::{BackendConfig, SessionConfig};
use thiserror::Error;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_LOG: &str = "sessions.jsonl";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Catalog JSON; the bundled catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Embedding store cache; built at startup with the configured backend
    /// when absent.
    pub store: Option<PathBuf>,
    pub log: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: DEFAULT_BIND.into(), catalog: None, store: None, log: PathBuf::from(DEFAULT_LOG) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backend: BackendConfig,
    pub session: SessionConfig,
    pub service: ServiceConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let config: Self =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.session.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
