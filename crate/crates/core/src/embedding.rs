//! Dense text embeddings.
//!
//! Every vector that leaves this module is L2-normalized, so cosine
//! similarity downstream is a plain dot product. Two providers exist: a
//! remote client for an OpenAI-style `/v1/embeddings` endpoint, and an
//! offline hashed n-gram embedder used for tests and air-gapped runs.

use std::sync::Arc;
use std::time::Duration;

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::retry::{self, AttemptError, RetryError, RetryPolicy};

pub const DEFAULT_DIMENSION: usize = 384;
pub const DEFAULT_REMOTE_MODEL: &str = "sentence-transformers/multi-qa-MiniLM-L6-cos-v1";
pub const DETERMINISTIC_MODEL: &str = "hash-ngram-v1";

/// Seed mixed into the FNV-1a hash used by [`embed_deterministic`]. Changing
/// it changes every deterministic vector, and therefore every fingerprint
/// produced with it must change too.
pub const DETERMINISTIC_HASH_SEED: u64 = 0x6d65_6472_6167_0001;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding provider unreachable after {attempts} attempts: {detail}")]
    ProviderUnreachable { attempts: u32, detail: String },
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("embedding provider returned HTTP {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("invalid embedding provider config: {0}")]
    InvalidConfig(String),
}

impl EmbedError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyInput(_) => "EmptyInput",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::ProviderUnreachable { .. } => "ProviderUnreachable",
            Self::MalformedResponse(_) => "MalformedResponse",
            Self::HttpError { .. } => "HttpError",
            Self::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

/// A unit-norm vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values`. Fails on empty, non-finite or all-zero input.
    pub fn normalized(values: &[f64]) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::EmptyInput("zero-length vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::MalformedResponse("non-finite vector entry".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::MalformedResponse("all-zero vector".into()));
        }
        Ok(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, EmbedError> {
        let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        Self::normalized(&wide)
    }

    /// Wraps values that are already unit-norm (e.g. read back from disk).
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::MalformedResponse("vector is empty or non-finite".into()));
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::MalformedResponse(format!("vector norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Deterministic,
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Remote => "remote",
            Self::Deterministic => "deterministic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    /// Base URL of the embeddings server (remote only).
    pub endpoint_url: String,
    pub model_name: String,
    pub dimension: usize,
    pub timeout_ms: u64,
    pub max_batch: usize,
    /// Batches allowed in flight at once per provider.
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self::deterministic(DEFAULT_DIMENSION)
    }
}

impl EmbeddingProviderConfig {
    pub fn deterministic(dimension: usize) -> Self {
        Self {
            kind: ProviderKind::Deterministic,
            endpoint_url: String::new(),
            model_name: DETERMINISTIC_MODEL.to_string(),
            dimension,
            timeout_ms: 30_000,
            max_batch: 64,
            max_concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }

    pub fn remote(endpoint_url: impl Into<String>, model_name: impl Into<String>, dimension: usize) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            ..Self::deterministic(dimension)
        }
    }

    /// Identifies the vector space: kind, model and dimension.
    pub fn fingerprint(&self) -> String {
        format!("{}:{}:{}", self.kind, self.model_name, self.dimension)
    }

    /// Rebuilds a provider config from an index fingerprint. Remote providers
    /// additionally need the endpoint they should talk to.
    pub fn from_fingerprint(fingerprint: &str, endpoint_url: Option<&str>) -> Result<Self, EmbedError> {
        let bad = || EmbedError::InvalidConfig(format!("unparseable fingerprint {fingerprint:?}"));
        let (kind, rest) = fingerprint.split_once(':').ok_or_else(bad)?;
        let (model, dim) = rest.rsplit_once(':').ok_or_else(bad)?;
        let dimension: usize = dim.parse().map_err(|_| bad())?;
        match kind {
            "deterministic" => {
                let mut cfg = Self::deterministic(dimension);
                cfg.model_name = model.to_string();
                Ok(cfg)
            }
            "remote" => {
                let url = endpoint_url.ok_or_else(|| {
                    EmbedError::InvalidConfig(format!(
                        "index was built with remote model {model}; an embedding endpoint is required"
                    ))
                })?;
                Ok(Self::remote(url, model, dimension))
            }
            _ => Err(bad()),
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let invalid = |m: &str| Err(EmbedError::InvalidConfig(m.to_string()));
        if self.dimension == 0 {
            return invalid("dimension must be positive");
        }
        if self.max_batch == 0 || self.max_concurrency == 0 || self.timeout_ms == 0 {
            return invalid("max_batch, max_concurrency and timeout_ms must be positive");
        }
        match self.kind {
            ProviderKind::Deterministic if self.dimension < 8 => {
                invalid("deterministic embedder needs dimension >= 8")
            }
            ProviderKind::Remote if self.endpoint_url.is_empty() => {
                invalid("remote provider needs endpoint_url")
            }
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Deterministic embedder

fn fnv1a(tag: u8, bytes: &[u8]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ DETERMINISTIC_HASH_SEED;
    for &b in std::iter::once(&tag).chain(bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Lowercased alphanumeric runs.
pub fn hash_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Hashed bag of words and character trigrams.
///
/// Each token and each character 3-gram of a token adds 1 to bucket
/// `fnv1a(seed, tag, bytes) % d`; the result is L2-normalized.
pub fn embed_deterministic(text: &str, d: usize) -> Result<EmbeddingVector, EmbedError> {
    if d < 8 {
        return Err(EmbedError::InvalidConfig("deterministic embedder needs d >= 8".into()));
    }
    let tokens = hash_tokens(text);
    if tokens.is_empty() {
        return Err(EmbedError::EmptyInput(format!("no tokens in {text:?}")));
    }
    let mut acc = vec![0f64; d];
    let mut buf = [0u8; 12];
    for token in &tokens {
        acc[(fnv1a(b'w', token.as_bytes()) % d as u64) as usize] += 1.0;
        let chars: Vec<char> = token.chars().collect();
        for tri in chars.windows(3) {
            let mut len = 0;
            for c in tri {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            acc[(fnv1a(b'g', &buf[..len]) % d as u64) as usize] += 1.0;
        }
    }
    EmbeddingVector::normalized(&acc)
}

// ---------------------------------------------------------------------------
// Remote embedder

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Parses and validates an embeddings response body for `expected` inputs.
fn parse_embeddings(body: &[u8], expected: usize, dimension: usize) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let resp: EmbeddingsResponse =
        serde_json::from_slice(body).map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
    if resp.data.len() != expected {
        return Err(EmbedError::MalformedResponse(format!(
            "expected {expected} embeddings, got {}",
            resp.data.len()
        )));
    }
    let mut slots: Vec<Option<EmbeddingVector>> = vec![None; expected];
    for datum in resp.data {
        if datum.index >= expected || slots[datum.index].is_some() {
            return Err(EmbedError::MalformedResponse(format!(
                "bad or repeated index {}",
                datum.index
            )));
        }
        if datum.embedding.len() != dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: dimension,
                actual: datum.embedding.len(),
            });
        }
        slots[datum.index] = Some(EmbeddingVector::normalized(&datum.embedding)?);
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

/// One POST to the embeddings endpoint, with retries. `texts` must fit in a
/// single batch.
pub async fn remote_embed_request(
    client: &reqwest::Client,
    texts: &[String],
    cfg: &EmbeddingProviderConfig,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let url = retry::endpoint(&cfg.endpoint_url, "/v1/embeddings");
    let body = EmbeddingsRequest {
        model: &cfg.model_name,
        input: texts,
    };
    let timeout = Duration::from_millis(cfg.timeout_ms);
    let result = retry::with_retries(cfg.retry, |_| {
        let req = client.post(&url).timeout(timeout).json(&body);
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
                return Err(AttemptError::Fatal(EmbedError::HttpError {
                    status: status.as_u16(),
                    body: String::from_utf8_lossy(&bytes).into_owned(),
                }));
            }
            parse_embeddings(&bytes, texts.len(), cfg.dimension).map_err(AttemptError::Fatal)
        }
    })
    .await;
    match result {
        Ok((vectors, _)) => Ok(vectors),
        Err(RetryError::Fatal(e)) => Err(e),
        Err(RetryError::Exhausted { attempts, last }) => {
            Err(EmbedError::ProviderUnreachable { attempts, detail: last })
        }
    }
}

/// A configured embedding provider. Cheap to clone and safe to share across
/// tasks; remote batches in flight are bounded by `max_concurrency`.
#[derive(Debug, Clone)]
pub struct Embedder {
    cfg: Arc<EmbeddingProviderConfig>,
    client: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl Embedder {
    pub fn new(cfg: EmbeddingProviderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let permits = Arc::new(Semaphore::new(cfg.max_concurrency));
        Ok(Self {
            cfg: Arc::new(cfg),
            client: reqwest::Client::new(),
            permits,
        })
    }

    pub fn config(&self) -> &EmbeddingProviderConfig {
        &self.cfg
    }

    pub fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    pub fn fingerprint(&self) -> String {
        self.cfg.fingerprint()
    }

    /// One vector per text, in order. Large inputs are split into batches of
    /// at most `max_batch`.
    pub async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyInput(format!("text {i} is empty")));
        }
        match self.cfg.kind {
            ProviderKind::Deterministic => texts
                .iter()
                .map(|t| embed_deterministic(t, self.cfg.dimension))
                .collect(),
            ProviderKind::Remote => {
                let batches = texts.chunks(self.cfg.max_batch).map(|batch| async move {
                    let _permit = self.permits.acquire().await.expect("semaphore never closed");
                    remote_embed_request(&self.client, batch, &self.cfg).await
                });
                Ok(try_join_all(batches).await?.into_iter().flatten().collect())
            }
        }
    }

    pub async fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = self.embed_batch(&[text.to_string()]).await?;
        Ok(v.pop().expect("one vector per text"))
    }
}
