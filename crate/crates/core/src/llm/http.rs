//! HTTP backend speaking the common chat-completions wire shape.
//!
//! POSTs `{"model", "messages", "temperature"}` and reads the first choice's
//! message content. Rate limits (429), server errors (5xx), and transport
//! failures surface as retryable; other client errors and malformed bodies
//! are terminal. The API key, if any, comes from an environment variable
//! named in the config so keys never land in config files or manifests.

use std::time::Duration;

use serde::Deserialize;

use super::{BackendError, ChatBackend, CompletionRequest};

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. An unset
    /// variable means unauthenticated requests (common for local servers).
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".to_string(),
            model: "default".to_string(),
            api_key_env: "QUARRY_API_KEY".to_string(),
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpBackendConfig,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::NonRetryable { message: format!("http client: {e}") })?;
        let api_key = std::env::var(&config.api_key_env).ok();
        Ok(HttpBackend { client, config, api_key })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| BackendError::Retryable {
            message: format!("transport: {e}"),
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Retryable { message: format!("status {status}") });
        }
        if !status.is_success() {
            return Err(BackendError::NonRetryable { message: format!("status {status}") });
        }
        let parsed: ChatResponse = response.json().map_err(|e| BackendError::NonRetryable {
            message: format!("malformed response body: {e}"),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::NonRetryable {
                message: "response contained no choices".to_string(),
            })
    }

    fn name(&self) -> &str {
        "http"
    }
}
