//! Chat-completions HTTP backend.
//!
//! Sends `POST {base_url}/chat/completions` with `model`, `messages`,
//! `temperature` and `max_tokens`, and reads the text of
//! `choices[0].message.content` from the reply.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::retry::{is_retriable_status, RetryPolicy};
use super::{ChatMessage, CompletionRequest, GatewayError, LlmBackend};

pub const API_KEY_ENV: &str = "AGENTMESH_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
}

impl LiveConfig {
    /// Reads the credential from `AGENTMESH_API_KEY` if it is set.
    pub fn from_env(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            request_timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Live backend; safe to call concurrently.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    config: LiveConfig,
}

enum Failure {
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(Self {
            client,
            endpoint,
            config,
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, Failure> {
        let body = WireRequest {
            model: &request.params.model_name,
            messages: &request.messages,
            temperature: request.params.temperature,
            max_tokens: request.params.max_output_tokens,
        };
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| Failure::Retry(GatewayError::Transport(e.to_string())))?;
        let status = response.status().as_u16();
        if status == 429 {
            return Err(Failure::Retry(GatewayError::RateLimited { attempts: 0 }));
        }
        let text = response
            .text()
            .map_err(|e| Failure::Retry(GatewayError::Transport(e.to_string())))?;
        if is_retriable_status(status) {
            return Err(Failure::Retry(GatewayError::Transport(format!(
                "HTTP {status}: {}",
                snippet(&text)
            ))));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(GatewayError::Rejected {
                status,
                body: snippet(&text),
            }));
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(GatewayError::MalformedResponse(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                Failure::Fatal(GatewayError::MalformedResponse(
                    "no choices[0].message.content".into(),
                ))
            })
    }
}

fn snippet(text: &str) -> String {
    const MAX: usize = 512;
    if text.len() <= MAX {
        return text.to_string();
    }
    let mut end = MAX;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &text[..end])
}

impl LlmBackend for LiveBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let policy = &self.config.retry;
        let mut retries = 0;
        loop {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) => {
                    if retries >= policy.max_retries {
                        return Err(match e {
                            GatewayError::RateLimited { .. } => GatewayError::RateLimited {
                                attempts: retries + 1,
                            },
                            other => other,
                        });
                    }
                    retries += 1;
                    std::thread::sleep(policy.delay(retries));
                }
            }
        }
    }
}
