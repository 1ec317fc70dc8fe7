//! Client for an OpenAI-style `/v1/chat/completions` endpoint.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::prompt::PromptBundle;
use super::GenerationConfig;
use crate::retry::{self, AttemptError, RetryError};

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("chat backend unreachable after {attempts} attempts: {detail}")]
    BackendUnreachable { attempts: u32, detail: String },
    #[error("chat backend returned HTTP {status}: {body}")]
    BackendError { status: u16, body: String },
    #[error("chat backend returned an empty completion")]
    EmptyCompletion,
    #[error("malformed chat response: {0}")]
    MalformedResponse(String),
}

impl GenerateError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::BackendUnreachable { .. } => "BackendUnreachable",
            Self::BackendError { .. } => "BackendError",
            Self::EmptyCompletion => "EmptyCompletion",
            Self::MalformedResponse(_) => "MalformedResponse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// A completed generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    /// HTTP attempts used, including the successful one.
    pub attempts: u32,
}

pub fn chat_request(prompt: &PromptBundle, cfg: &GenerationConfig) -> ChatRequest {
    ChatRequest {
        model: cfg.model_name.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: prompt.system_instruction.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: prompt.user_message().to_string(),
            },
        ],
        temperature: cfg.temperature,
        max_tokens: cfg.max_new_tokens,
    }
}

/// Shared chat client; bounds the number of requests in flight.
#[derive(Debug, Clone)]
pub struct ChatClient {
    client: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl Default for ChatClient {
    fn default() -> Self {
        Self::new(4)
    }
}

impl ChatClient {
    pub fn new(max_concurrency: usize) -> Self {
        Self {
            client: reqwest::Client::new(),
            permits: Arc::new(Semaphore::new(max_concurrency.max(1))),
        }
    }

    pub async fn generate(&self, prompt: &PromptBundle, cfg: &GenerationConfig) -> Result<Generation, GenerateError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let url = retry::endpoint(&cfg.endpoint_url, "/v1/chat/completions");
        let body = chat_request(prompt, cfg);
        let timeout = Duration::from_millis(cfg.timeout_ms);
        let result = retry::with_retries(cfg.retry, |_| {
            let req = self.client.post(&url).timeout(timeout).json(&body);
            async move {
                let resp = req
                    .send()
                    .await
                    .map_err(|e| AttemptError::Transient(e.to_string()))?;
                let status = resp.status();
                let bytes = resp
                    .bytes()
                    .await
                    .map_err(|e| AttemptError::Transient(e.to_string()))?;
                if retry::is_transient_status(status) {
                    return Err(AttemptError::Transient(format!("HTTP {status}")));
                }
                if !status.is_success() {
                    return Err(AttemptError::Fatal(GenerateError::BackendError {
                        status: status.as_u16(),
                        body: String::from_utf8_lossy(&bytes).into_owned(),
                    }));
                }
                let parsed: ChatResponse = serde_json::from_slice(&bytes)
                    .map_err(|e| AttemptError::Fatal(GenerateError::MalformedResponse(e.to_string())))?;
                let text = parsed
                    .choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content)
                    .ok_or_else(|| AttemptError::Fatal(GenerateError::MalformedResponse("no choices".into())))?;
                if text.trim().is_empty() {
                    return Err(AttemptError::Fatal(GenerateError::EmptyCompletion));
                }
                Ok(text)
            }
        })
        .await;
        match result {
            Ok((text, attempts)) => Ok(Generation { text, attempts }),
            Err(RetryError::Fatal(e)) => Err(e),
            Err(RetryError::Exhausted { attempts, last }) => {
                Err(GenerateError::BackendUnreachable { attempts, detail: last })
            }
        }
    }
}
