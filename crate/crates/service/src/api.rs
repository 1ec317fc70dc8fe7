//! Request handlers and wire types.

use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use medrag_core::chunking::chunk_documents;
use medrag_core::index::build_index;
use medrag_core::ingest::read_corpus;
use medrag_core::{AskError, Chunk, ChunkingConfig, IndexError, Mode, SearchHit, VectorIndex};
use serde::{Deserialize, Serialize};

use crate::AppState;

#[derive(Debug, Clone, Deserialize)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
    pub text: String,
}

impl Source {
    fn new(hit: &SearchHit, chunk: &Chunk) -> Self {
        Self {
            chunk_id: hit.chunk_id.clone(),
            doc_id: chunk.doc_id.clone(),
            score: hit.score,
            rank: hit.rank,
            text: chunk.text.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: String,
    pub sources: Vec<Source>,
    pub latency_ms: u64,
    pub model: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<Source>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub index_entries: usize,
    pub dimension: usize,
    pub embedder_fingerprint: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReindexRequest {
    pub corpus_path: PathBuf,
    #[serde(default)]
    pub chunking: ChunkingConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReindexResponse {
    pub entries: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

/// An error response: status plus `{error, detail}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.to_string(),
                detail: detail.into(),
            },
        }
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "IndexUnavailable", "no index is loaded")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", r.body_text())
    }
}

impl From<AskError> for ApiError {
    fn from(e: AskError) -> Self {
        let detail = e.to_string();
        match &e {
            AskError::Prompt(_) => Self::new(StatusCode::BAD_REQUEST, "EmptyQuestion", detail),
            AskError::Search(IndexError::EmptyIndex) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "IndexUnavailable", detail),
            AskError::Search(IndexError::InvalidConfig(_)) => Self::new(StatusCode::BAD_REQUEST, "InvalidRequest", detail),
            AskError::Search(other) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.code(), detail),
            AskError::FingerprintMismatch { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), detail),
            AskError::Embed(_) | AskError::Generate(_) => Self::new(StatusCode::BAD_GATEWAY, e.code(), detail),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn current_index(state: &AppState) -> Result<Arc<VectorIndex>, ApiError> {
    state.index().ok_or_else(ApiError::unavailable)
}

fn sources(index: &VectorIndex, hits: &[SearchHit]) -> Vec<Source> {
    hits.iter()
        .filter_map(|h| index.chunk(&h.chunk_id).map(|c| Source::new(h, c)))
        .collect()
}

pub async fn ask(State(state): State<Arc<AppState>>, req: Result<Json<AskRequest>, JsonRejection>) -> ApiResult<AskResponse> {
    let Json(req) = req?;
    if req.question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "EmptyQuestion", "question is empty"));
    }
    let mut gcfg = state.generation.clone();
    if let Some(mode) = req.mode {
        gcfg.mode = mode;
    }
    let mut rcfg = state.retrieval;
    if let Some(k) = req.top_k {
        rcfg.top_k = k;
    }
    let index = current_index(&state)?;
    let answer = state.engine.ask(&req.question, &index, &rcfg, &gcfg).await?;
    Ok(Json(AskResponse {
        sources: sources(&index, &answer.prompt.included_hits),
        answer: answer.text,
        latency_ms: answer.latency_ms,
        model: answer.model_name,
    }))
}

pub async fn search(
    State(state): State<Arc<AppState>>,
    req: Result<Json<SearchRequest>, JsonRejection>,
) -> ApiResult<SearchResponse> {
    let Json(req) = req?;
    if req.query.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "EmptyQuery", "query is empty"));
    }
    let mut rcfg = state.retrieval;
    if let Some(k) = req.top_k {
        rcfg.top_k = k;
    }
    let index = current_index(&state)?;
    let hits = state.engine.retrieve(&req.query, &index, &rcfg).await.map_err(|e| match e {
        AskError::Prompt(_) => ApiError::new(StatusCode::BAD_REQUEST, "EmptyQuery", e.to_string()),
        other => other.into(),
    })?;
    Ok(Json(SearchResponse {
        hits: hits.iter().map(|(h, c)| Source::new(h, c)).collect(),
    }))
}

pub async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.index() {
        Some(ix) => Json(HealthResponse {
            status: "ok".into(),
            index_entries: ix.len(),
            dimension: ix.dimension(),
            embedder_fingerprint: ix.fingerprint().to_string(),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(HealthResponse {
                status: "loading".into(),
                index_entries: 0,
                dimension: state.engine.embedder().dimension(),
                embedder_fingerprint: state.engine.embedder().fingerprint(),
            }),
        )
            .into_response(),
    }
}

/// Clears the reindex flag when the build finishes or is abandoned.
struct ReindexGuard(Arc<AppState>);

impl Drop for ReindexGuard {
    fn drop(&mut self) {
        self.0.reindexing.store(false, Ordering::SeqCst);
    }
}

pub async fn reindex(
    State(state): State<Arc<AppState>>,
    req: Result<Json<ReindexRequest>, JsonRejection>,
) -> ApiResult<ReindexResponse> {
    let Json(req) = req?;
    if state
        .reindexing
        .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
        .is_err()
    {
        return Err(ApiError::new(StatusCode::CONFLICT, "ReindexInProgress", "a reindex is already running"));
    }
    let guard = ReindexGuard(state.clone());
    // The build runs in its own task so a dropped connection cannot abandon a
    // half-built index while the flag is still held.
    let task = tokio::spawn(async move {
        let guard = guard;
        let st = &guard.0;
        let bad = |detail: String| ApiError::new(StatusCode::BAD_REQUEST, "BadCorpus", detail);
        let corpus = read_corpus(&req.corpus_path).map_err(|e| bad(e.to_string()))?;
        let chunks = chunk_documents(corpus.documents(), &req.chunking).map_err(|e| bad(e.to_string()))?;
        let index = build_index(chunks, st.engine.embedder(), &corpus.name).await.map_err(|e| match e {
            IndexError::Embed(inner) => ApiError::new(StatusCode::BAD_GATEWAY, inner.code(), inner.to_string()),
            other => bad(other.to_string()),
        })?;
        let entries = index.len();
        st.swap_index(index);
        tracing::info!(entries, corpus = %corpus.name, "reindex complete");
        Ok::<_, ApiError>(entries)
    });
    let entries = task
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "ReindexFailed", e.to_string()))??;
    Ok(Json(ReindexResponse { entries }))
}
