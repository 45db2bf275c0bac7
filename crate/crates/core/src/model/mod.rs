//! Model backends, conversation assembly and cost metering.

mod history;
mod http;
mod ledger;
mod mock;
mod ratelimit;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use history::{assemble_context, elision_stub, HistoryPolicy};
pub use http::{request_body, HttpModel};
pub use ledger::{BudgetExceeded, CostLedger, Usage, DEFAULT_BUDGET};
pub use mock::{MockModel, MockScript, ReplayModel, ScriptedResponse};
pub use ratelimit::RateLimiter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub fn estimate_messages(messages: &[Message]) -> u64 {
    messages.iter().map(|m| estimate_tokens(&m.content)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpApi,
    #[default]
    MockScript,
    ReplayFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimitConfig {
    /// Requests that may be issued back to back.
    pub burst: u32,
    pub per_second: f64,
}

impl Default for RateLimitConfig {
    fn default() -> Self {
        RateLimitConfig {
            burst: 4,
            per_second: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backend: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    /// Dollars per input token.
    pub price_in: f64,
    /// Dollars per output token.
    pub price_out: f64,
    pub context_limit: u64,
    pub max_tokens: Option<u64>,
    /// Mock script (mock_script) or trajectory file (replay_file).
    pub path: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub retry_backoff_ms: u64,
    pub request_timeout_secs: u64,
    pub rate_limit: Option<RateLimitConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backend: BackendKind::MockScript,
            model_name: "mock".into(),
            temperature: 0.0,
            top_p: 0.95,
            price_in: 0.0,
            price_out: 0.0,
            context_limit: 128_000,
            max_tokens: None,
            path: None,
            endpoint: None,
            api_key_env: "CTF_AGENT_API_KEY".into(),
            max_retries: 3,
            retry_backoff_ms: 500,
            request_timeout_secs: 120,
            rate_limit: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid model config: {0}")]
    Invalid(String),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ConfigError::Invalid("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ConfigError::Invalid("top_p must be in (0, 1]".into()));
        }
        if self.price_in < 0.0 || self.price_out < 0.0 {
            return Err(ConfigError::Invalid("prices must be non-negative".into()));
        }
        match self.backend {
            BackendKind::MockScript | BackendKind::ReplayFile if self.path.is_none() => {
                Err(ConfigError::Invalid("this backend needs `path`".into()))
            }
            BackendKind::HttpApi if self.endpoint.is_none() => {
                Err(ConfigError::Invalid("http_api needs `endpoint`".into()))
            }
            _ => Ok(()),
        }
    }

    /// Reads a TOML model config. Relative paths resolve against the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<ModelConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ModelConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if let (Some(p), Some(dir)) = (&cfg.path, path.parent()) {
            if p.is_relative() {
                cfg.path = Some(dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReply {
    pub text: String,
    pub usage: Usage,
    /// Request/response record for the trajectory, without credentials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exchange: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("model transport failed: {0}")]
    Transport(String),
    #[error("scripted responses exhausted after {0} queries")]
    Exhausted(usize),
    #[error("bad model response: {0}")]
    BadResponse(String),
    #[error("{0}")]
    Config(String),
}

pub trait ChatModel: Send {
    fn query(&mut self, messages: &[Message]) -> Result<ModelReply, ModelError>;
}

/// Builds the backend named by `cfg`.
pub fn build_model(
    cfg: &ModelConfig,
    limiter: Option<RateLimiter>,
) -> Result<Box<dyn ChatModel>, ModelError> {
    cfg.validate().map_err(|e| ModelError::Config(e.to_string()))?;
    let path = || cfg.path.clone().expect("validated");
    Ok(match cfg.backend {
        BackendKind::MockScript => Box::new(
            MockModel::from_file(&path()).map_err(|e| ModelError::Config(e.to_string()))?,
        ),
        BackendKind::ReplayFile => Box::new(
            ReplayModel::from_trajectory(&path()).map_err(|e| ModelError::Config(e.to_string()))?,
        ),
        BackendKind::HttpApi => Box::new(HttpModel::new(cfg.clone(), limiter)?),
    })
}
