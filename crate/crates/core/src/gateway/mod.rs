//! Uniform completion interface over live, recording and replay backends.

mod cassette;
mod live;
mod retry;

pub use cassette::{
    parse_cassette, read_cassette, write_cassette, CassetteError, CassetteRecord, RecordingBackend,
    ReplayBackend, ReplayMode,
};
pub use live::{LiveBackend, LiveConfig, API_KEY_ENV};
pub use retry::{is_retriable_status, retry_schedule, RetryPolicy};

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Planner,
    Coder,
    Debugger,
    Reviewer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [
        AgentRole::Planner,
        AgentRole::Coder,
        AgentRole::Debugger,
        AgentRole::Reviewer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Planner => "planner",
            AgentRole::Coder => "coder",
            AgentRole::Debugger => "debugger",
            AgentRole::Reviewer => "reviewer",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
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
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

pub const DEFAULT_MODEL: &str = "gpt-4";

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            model_name: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub agent_role: AgentRole,
    pub messages: Vec<ChatMessage>,
    pub params: CompletionParams,
}

impl CompletionRequest {
    pub fn new(
        agent_role: AgentRole,
        messages: Vec<ChatMessage>,
        params: CompletionParams,
    ) -> Result<Self, GatewayError> {
        let request = Self {
            agent_role,
            messages,
            params,
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |msg: &str| Err(GatewayError::InvalidRequest(msg.to_string()));
        match self.messages.first() {
            None => return invalid("message list is empty"),
            Some(m) if m.role != Role::System => {
                return invalid("first message must be a system message")
            }
            _ => {}
        }
        if self
            .messages
            .iter()
            .any(|m| m.role != Role::Assistant && m.content.is_empty())
        {
            return invalid("system and user messages must not be empty");
        }
        if !(0.0..=1.0).contains(&self.params.temperature) {
            return invalid("temperature must lie in [0, 1]");
        }
        if self.params.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        if self.params.model_name.is_empty() {
            return invalid("model name is empty");
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        prompt_digest(&self.messages)
    }
}

/// Lowercase hex SHA-256 over `role 0x1F content 0x1E` for every message.
pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.role.as_str().as_bytes());
        hasher.update([0x1f]);
        hasher.update(m.content.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cassette exhausted: no record left for {role} call #{seq}")]
    CassetteExhausted { seq: u64, role: AgentRole },
    #[error("cassette mismatch at record {seq}: {detail}")]
    CassetteMismatch { seq: u64, detail: String },
    #[error("cassette I/O: {0}")]
    Cassette(#[from] CassetteError),
}

impl GatewayError {
    /// True for errors meaning a replay has diverged from its cassette.
    /// These always abort a run instead of being absorbed by a stage.
    pub fn is_replay_divergence(&self) -> bool {
        matches!(
            self,
            GatewayError::CassetteExhausted { .. } | GatewayError::CassetteMismatch { .. }
        )
    }
}

/// A completion backend. Implementations must be callable from any thread.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}
