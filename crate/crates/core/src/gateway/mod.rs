//! Sessioned access to chat-completion backends.
//!
//! A [`ChatSession`] owns its full message history and sends it with every
//! request, so backends are stateless with respect to sessions: a fresh
//! session sees exactly the messages that were sent to it and nothing else.

mod http;
mod mock;
mod transcript;

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{build_chat_request_body, parse_chat_completion, OpenAiBackend, DEFAULT_API_KEY_ENV};
pub use mock::{LoggedRequest, MockBackend, SyntheticResponder};
pub use transcript::{read_transcript_dir, ReplayBackend, TranscriptEntry, TranscriptFile};

/// Model the benchmark was originally collected against.
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("rate limited by {endpoint}")]
    RateLimited { endpoint: String },

    #[error("backend {endpoint} returned HTTP {status}: {body}")]
    Http {
        endpoint: String,
        status: u16,
        body: String,
    },

    #[error("malformed backend reply: {0}")]
    MalformedReply(String),

    #[error("malformed backend reply: empty assistant content from {0}")]
    EmptyReply(String),

    #[error("invalid session {0}: session is closed")]
    SessionClosed(String),

    #[error("session id {0} already issued in this run")]
    DuplicateSession(String),

    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),

    #[error("invalid message: {0}")]
    InvalidMessage(String),

    #[error("replay diverged in session {session_id} at prompt {index}: expected {expected:?}, got {actual:?}")]
    ReplayDivergence {
        session_id: String,
        index: usize,
        expected: String,
        actual: String,
    },

    #[error("replay has no recorded turn {index} for session {session_id}")]
    ReplayExhausted { session_id: String, index: usize },

    #[error("no scripted reply for prompt {0:?}")]
    Unscripted(String),

    #[error("transcript i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("transcript format: {0}")]
    TranscriptFormat(String),
}

impl GatewayError {
    /// Transport failures and rate limits are retried; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. } | GatewayError::RateLimited { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self, GatewayError> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(GatewayError::InvalidMessage(format!(
                "{role:?} message content is empty"
            )));
        }
        Ok(Self { role, content })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model_name: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be >= 1".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidParams("model_name is empty".into()));
        }
        Ok(())
    }
}

/// One request as seen by a backend: the full visible history plus params.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub session_id: &'a str,
    pub messages: &'a [ChatMessage],
    pub params: &'a GenerationParams,
}

impl CompletionRequest<'_> {
    /// Content of the trailing user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Zero-based index of the trailing user message among user messages.
    pub fn turn(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .count()
            .saturating_sub(1)
    }
}

/// A chat-completion provider. Implementations must be shareable across threads.
pub trait ChatBackend: Send + Sync {
    /// Stable identifier recorded alongside interrogation results.
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError>;

    /// Cheap reachability check performed when a session is opened.
    fn probe(&self) -> Result<(), GatewayError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before retry `i` (0-based) is `base_delay * 2^i`.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

/// Factory for sessions over one shared backend.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    issued: Mutex<HashSet<String>>,
    counter: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            issued: Mutex::new(HashSet::new()),
            counter: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    /// Opens a session with an auto-generated id.
    ///
    /// History always lives client-side, so every session is memoryless with
    /// respect to other sessions; `fresh` is recorded on the session for
    /// auditing.
    pub fn open_session(&self, fresh: bool, params: GenerationParams) -> Result<ChatSession, GatewayError> {
        loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let id = format!("session-{n:04}");
            match self.open_named_session(id, fresh, params.clone()) {
                Err(GatewayError::DuplicateSession(_)) => continue,
                other => return other,
            }
        }
    }

    /// Opens a session with a caller-chosen id, which must be unique for this gateway.
    pub fn open_named_session(
        &self,
        id: impl Into<String>,
        fresh: bool,
        params: GenerationParams,
    ) -> Result<ChatSession, GatewayError> {
        params.validate()?;
        let id = id.into();
        {
            let mut issued = self.issued.lock().expect("session registry poisoned");
            if !issued.insert(id.clone()) {
                return Err(GatewayError::DuplicateSession(id));
            }
        }
        self.backend.probe()?;
        Ok(ChatSession {
            id,
            backend: Arc::clone(&self.backend),
            params,
            retry: self.retry,
            fresh,
            closed: false,
            messages: Vec::new(),
            exchanges: Vec::new(),
        })
    }
}

/// One completed prompt/reply pair within a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

pub struct ChatSession {
    id: String,
    backend: Arc<dyn ChatBackend>,
    params: GenerationParams,
    retry: RetryPolicy,
    fresh: bool,
    closed: bool,
    messages: Vec<ChatMessage>,
    exchanges: Vec<Exchange>,
}

impl fmt::Debug for ChatSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatSession")
            .field("id", &self.id)
            .field("backend", &self.backend.id())
            .field("messages", &self.messages.len())
            .field("closed", &self.closed)
            .finish()
    }
}

impl ChatSession {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    pub fn is_fresh(&self) -> bool {
        self.fresh
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Adds a leading system message. Only valid before the first exchange.
    pub fn set_system(&mut self, content: impl Into<String>) -> Result<(), GatewayError> {
        if !self.messages.is_empty() {
            return Err(GatewayError::InvalidMessage(
                "system message must precede all turns".into(),
            ));
        }
        self.messages.push(ChatMessage::new(Role::System, content)?);
        Ok(())
    }

    /// Sends `prompt` with the full history and appends both turns on success.
    ///
    /// History is untouched when the call fails, so a session never holds a
    /// dangling user message.
    pub fn send(&mut self, prompt: &str) -> Result<String, GatewayError> {
        if self.closed {
            return Err(GatewayError::SessionClosed(self.id.clone()));
        }
        let user = ChatMessage::new(Role::User, prompt)?;
        self.messages.push(user);
        let result = self.send_with_retry();
        match result {
            Ok(reply) => {
                self.messages.push(ChatMessage {
                    role: Role::Assistant,
                    content: reply.clone(),
                });
                self.exchanges.push(Exchange {
                    prompt: prompt.to_string(),
                    response: reply.clone(),
                });
                Ok(reply)
            }
            Err(e) => {
                self.messages.pop();
                Err(e)
            }
        }
    }

    fn send_with_retry(&self) -> Result<String, GatewayError> {
        let request = CompletionRequest {
            session_id: &self.id,
            messages: &self.messages,
            params: &self.params,
        };
        let mut attempt = 0u32;
        loop {
            match self.backend.complete(&request) {
                Ok(reply) if reply.trim().is_empty() => {
                    return Err(GatewayError::EmptyReply(self.backend.id().to_string()))
                }
                Ok(reply) => return Ok(reply),
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    let delay = self.retry.delay_for(attempt);
                    log::warn!("session {}: {e}; retrying in {delay:?}", self.id);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Snapshot of this session's exchanges in transcript form.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.exchanges
            .iter()
            .enumerate()
            .map(|(turn, ex)| TranscriptEntry {
                session_id: self.id.clone(),
                turn,
                prompt: ex.prompt.clone(),
                response: ex.response.clone(),
            })
            .collect()
    }
}

/// Captures a session's exchanges as a transcript file.
pub fn record_transcript(session: &ChatSession) -> TranscriptFile {
    TranscriptFile {
        entries: session.transcript(),
    }
}

/// Replays `prompts` against a recorded transcript through a fresh session
/// named after the transcript's first session.
pub fn replay_prompts(transcript: &TranscriptFile, prompts: &[&str]) -> Result<Vec<String>, GatewayError> {
    let session_id = transcript
        .entries
        .first()
        .map(|e| e.session_id.clone())
        .ok_or_else(|| GatewayError::TranscriptFormat("transcript is empty".into()))?;
    let gateway = Gateway::new(Arc::new(ReplayBackend::from_transcript(transcript))).with_retry(RetryPolicy::none());
    let mut session = gateway.open_named_session(session_id, true, GenerationParams::default())?;
    prompts.iter().map(|p| session.send(p)).collect()
}
