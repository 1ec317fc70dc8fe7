//! Query pipeline: embed the question, retrieve chunks, build the prompt and
//! call the chat backend.

pub mod chat;
pub mod prompt;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use chat::{ChatClient, ChatMessage, ChatRequest, GenerateError, Generation};
pub use prompt::{build_prompt, PromptBundle, PromptError, SYSTEM_INSTRUCTION};

use crate::chunking::Chunk;
use crate::embedding::{EmbedError, Embedder};
use crate::index::{IndexError, RetrievalConfig, SearchHit, VectorIndex};
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Zero-shot: no retrieval, no context section.
    Vanilla,
    #[default]
    Rag,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rag" => Ok(Self::Rag),
            "vanilla" => Ok(Self::Vanilla),
            other => Err(format!("unknown mode {other:?} (expected rag or vanilla)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Base URL of the chat-completions server.
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub context_char_budget: usize,
    pub mode: Mode,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000".into(),
            model_name: "mistralai/Mistral-7B-v0.3".into(),
            temperature: 0.2,
            max_new_tokens: 256,
            context_char_budget: 6000,
            mode: Mode::Rag,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub text: String,
    /// Everything retrieval returned, in rank order. Empty in vanilla mode.
    pub hits: Vec<SearchHit>,
    pub prompt: PromptBundle,
    pub latency_ms: u64,
    pub model_name: String,
    pub attempts: u32,
}

/// A pipeline failure, labelled with the stage that produced it.
#[derive(Debug, thiserror::Error)]
pub enum AskError {
    #[error("[prompt] {0}")]
    Prompt(#[from] PromptError),
    #[error("[embed] {0}")]
    Embed(#[from] EmbedError),
    #[error("[embed] index was built with {index}, query embedder is {query}")]
    FingerprintMismatch { index: String, query: String },
    #[error("[search] {0}")]
    Search(#[from] IndexError),
    #[error("[generate] {0}")]
    Generate(#[from] GenerateError),
}

impl AskError {
    pub fn stage(&self) -> &'static str {
        match self {
            Self::Prompt(_) => "prompt",
            Self::Embed(_) | Self::FingerprintMismatch { .. } => "embed",
            Self::Search(_) => "search",
            Self::Generate(_) => "generate",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::Prompt(e) => e.code(),
            Self::Embed(e) => e.code(),
            Self::FingerprintMismatch { .. } => "FingerprintMismatch",
            Self::Search(e) => e.code(),
            Self::Generate(e) => e.code(),
        }
    }
}

/// Embedder plus chat client. Cheap to clone; safe to share across tasks.
#[derive(Debug, Clone)]
pub struct RagEngine {
    embedder: Embedder,
    chat: ChatClient,
}

impl RagEngine {
    pub fn new(embedder: Embedder, chat: ChatClient) -> Self {
        Self { embedder, chat }
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn chat(&self) -> &ChatClient {
        &self.chat
    }

    /// Retrieval only: hits paired with their chunks.
    pub async fn retrieve(
        &self,
        query: &str,
        index: &VectorIndex,
        rcfg: &RetrievalConfig,
    ) -> Result<Vec<(SearchHit, Chunk)>, AskError> {
        if query.trim().is_empty() {
            return Err(PromptError::EmptyQuery.into());
        }
        if index.is_empty() {
            return Err(IndexError::EmptyIndex.into());
        }
        if index.fingerprint() != self.embedder.fingerprint() {
            return Err(AskError::FingerprintMismatch {
                index: index.fingerprint().to_string(),
                query: self.embedder.fingerprint(),
            });
        }
        let qvec = self.embedder.embed_one(query.trim()).await?;
        let hits = index.search(&qvec, rcfg)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let chunk = index.chunk(&h.chunk_id).expect("hit ids resolve").clone();
                (h, chunk)
            })
            .collect())
    }

    /// Full pipeline. Vanilla mode skips retrieval entirely.
    pub async fn ask(
        &self,
        query: &str,
        index: &VectorIndex,
        rcfg: &RetrievalConfig,
        gcfg: &GenerationConfig,
    ) -> Result<Answer, AskError> {
        let started = Instant::now();
        if query.trim().is_empty() {
            return Err(PromptError::EmptyQuery.into());
        }
        let retrieved = match gcfg.mode {
            Mode::Rag => self.retrieve(query, index, rcfg).await?,
            Mode::Vanilla => Vec::new(),
        };
        let prompt = build_prompt(query, &retrieved, gcfg)?;
        let generation = self.chat.generate(&prompt, gcfg).await?;
        Ok(Answer {
            text: generation.text,
            hits: retrieved.into_iter().map(|(h, _)| h).collect(),
            prompt,
            latency_ms: started.elapsed().as_millis() as u64,
            model_name: gcfg.model_name.clone(),
            attempts: generation.attempts,
        })
    }
}
