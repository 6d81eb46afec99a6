//! Chat-completion clients behind one trait, plus the model registry.

mod registry;
mod remote;
mod scripted;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use registry::{ModelRegistry, RegistryError};
pub use remote::{OpenAiCompatible, RemoteClient, TokenBucket};
pub use scripted::{Script, ScriptedBackend, ScriptedClient, EXHAUSTED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    None,
    Medium,
    High,
}

impl ReasoningEffort {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningEffort::None => "none",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// First backoff delay in seconds; doubles per attempt, with jitter.
    pub base_delay: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    /// Name of the client backend in [`ClientBackendRegistry`].
    pub backend: String,
    /// Base URL for remote backends, script path for the scripted backend.
    pub endpoint: String,
    /// Upstream model name, when it differs from `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    /// Whether the endpoint understands `reasoning_effort`.
    #[serde(default)]
    pub accepts_reasoning_effort: bool,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Sampling seed forwarded to endpoints that accept one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_max_output() -> u32 {
    8192
}

fn default_rpm() -> u32 {
    60
}

impl ModelConfig {
    pub fn scripted(model_id: impl Into<String>, script: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            backend: "scripted".into(),
            endpoint: script.into(),
            model_name: None,
            temperature: 0.0,
            reasoning_effort: None,
            max_output_tokens: default_max_output(),
            credential_env: None,
            accepts_reasoning_effort: false,
            requests_per_minute: default_rpm(),
            retry: RetryPolicy::default(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ClientError::Config(format!(
                "{}: temperature {} outside [0, 2]",
                self.model_id, self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(ClientError::Config(format!(
                "{}: max_output_tokens must be positive",
                self.model_id
            )));
        }
        Ok(())
    }

    pub fn with_temperature(&self, t: f64) -> Self {
        Self {
            temperature: t,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    /// Seconds spent waiting for the backend.
    pub latency: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("rate limited after {0} retries")]
    RateLimited(u32),
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("usage error: {0}")]
    UsageError(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// One conversation's handle on a model. Each episode owns its client.
pub trait ModelClient: Send {
    fn model_id(&self) -> &str;
    fn complete(&mut self, messages: &[Message]) -> Result<Completion, ClientError>;
}

/// Builds clients for one kind of endpoint. `key` names the conversation
/// (usually the task id) so deterministic backends can pick a script.
pub trait ClientBackend: Send + Sync {
    fn name(&self) -> &str;
    fn client(&self, config: &ModelConfig, key: &str) -> Result<Box<dyn ModelClient>, ClientError>;
}

#[derive(Clone)]
pub struct ClientBackendRegistry {
    backends: BTreeMap<String, Arc<dyn ClientBackend>>,
}

impl Default for ClientBackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            backends: BTreeMap::new(),
        };
        r.register(Arc::new(ScriptedBackend));
        r.register(Arc::new(OpenAiCompatible));
        r
    }
}

impl ClientBackendRegistry {
    pub fn register(&mut self, backend: Arc<dyn ClientBackend>) {
        self.backends.insert(backend.name().to_string(), backend);
    }

    pub fn client(
        &self,
        config: &ModelConfig,
        key: &str,
    ) -> Result<Box<dyn ModelClient>, ClientError> {
        config.validate()?;
        let backend = self.backends.get(&config.backend).ok_or_else(|| {
            ClientError::Config(format!("unknown client backend `{}`", config.backend))
        })?;
        backend.client(config, key)
    }
}

/// Whitespace token count used for deterministic usage accounting.
pub fn rough_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub(crate) fn require_messages(messages: &[Message]) -> Result<(), ClientError> {
    if messages.is_empty() {
        return Err(ClientError::UsageError(
            "complete called with no messages".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temperature_bounds() {
        let mut c = ModelConfig::scripted("m", "x");
        assert!(c.validate().is_ok());
        c.temperature = 2.5;
        assert!(matches!(c.validate(), Err(ClientError::Config(_))));
    }

    #[test]
    fn unknown_backend() {
        let mut c = ModelConfig::scripted("m", "x");
        c.backend = "carrier-pigeon".into();
        assert!(matches!(
            ClientBackendRegistry::default().client(&c, "k"),
            Err(ClientError::Config(_))
        ));
    }
}
