use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, CompletionRequest, GatewayError};

/// Environment variable consulted for the bearer token when none is configured.
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// OpenAI-compatible chat-completions client.
pub struct OpenAiBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl OpenAiBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport {
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint,
            api_key,
            client,
        })
    }

    /// Reads the API key from `key_env`; a missing variable means no auth header.
    pub fn from_env(endpoint: impl Into<String>, key_env: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let key = std::env::var(key_env).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("{key_env} is not set; sending requests without authorization");
        }
        Self::new(endpoint, key, timeout)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

pub fn build_chat_request_body(request: &CompletionRequest<'_>) -> Value {
    json!({
        "model": request.params.model_name,
        "messages": request.messages,
        "temperature": request.params.temperature,
        "max_tokens": request.params.max_tokens,
    })
}

/// Extracts `choices[0].message.content` from a chat-completions response body.
pub fn parse_chat_completion(body: &str) -> Result<String, GatewayError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedReply(format!("non-JSON body: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedReply("missing choices[0].message.content".into()))
}

impl ChatBackend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.endpoint
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let mut rb = self.client.post(&self.endpoint).json(&build_chat_request_body(request));
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| GatewayError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let resp = rb.send().map_err(transport)?;
        let status = resp.status();
        let body = resp.text().map_err(transport)?;
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited {
                endpoint: self.endpoint.clone(),
            });
        }
        if status.is_server_error() {
            return Err(GatewayError::Transport {
                endpoint: self.endpoint.clone(),
                message: format!("HTTP {status}"),
            });
        }
        if !status.is_success() {
            return Err(GatewayError::Http {
                endpoint: self.endpoint.clone(),
                status: status.as_u16(),
                body,
            });
        }
        parse_chat_completion(&body)
    }
}
