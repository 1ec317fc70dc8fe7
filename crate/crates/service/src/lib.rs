//! HTTP question-answering service.
//!
//! Endpoints: `POST /api/ask`, `POST /api/search`, `GET /api/health` and
//! `POST /api/reindex`. Errors are returned as `{"error": code, "detail": ..}`.

pub mod api;
pub mod config;

use std::net::SocketAddr;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, RwLock};

use axum::http::{header, HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use medrag_core::{
    ChatClient, EmbedError, Embedder, GenerationConfig, IndexError, RagEngine, RetrievalConfig, VectorIndex,
};
use tokio::task::JoinHandle;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use config::ServiceConfig;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot load index: {0}")]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index was built with {index}, configured embedder is {configured}")]
    FingerprintMismatch { index: String, configured: String },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "InvalidConfig",
            Self::Index(e) => e.code(),
            Self::Embed(e) => e.code(),
            Self::FingerprintMismatch { .. } => "FingerprintMismatch",
            Self::Bind { .. } => "BindFailure",
        }
    }
}

/// Shared request state. The index sits behind a lock that is only held
/// long enough to clone or replace the `Arc`, so a swap never blocks on
/// in-flight requests and they finish on the index they started with.
pub struct AppState {
    pub engine: RagEngine,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationConfig,
    index: RwLock<Option<Arc<VectorIndex>>>,
    reindexing: AtomicBool,
}

impl AppState {
    pub fn new(engine: RagEngine, retrieval: RetrievalConfig, generation: GenerationConfig) -> Self {
        Self {
            engine,
            retrieval,
            generation,
            index: RwLock::new(None),
            reindexing: AtomicBool::new(false),
        }
    }

    pub fn index(&self) -> Option<Arc<VectorIndex>> {
        self.index.read().expect("index lock").clone()
    }

    pub fn swap_index(&self, index: VectorIndex) {
        *self.index.write().expect("index lock") = Some(Arc::new(index));
    }
}

fn cors_layer(origins: &[String]) -> Result<CorsLayer, ServiceError> {
    let values = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::Config(format!("bad CORS origin {o:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorsLayer::new()
        .allow_origin(AllowOrigin::list(values))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn router(state: Arc<AppState>, cors_allowed_origins: &[String]) -> Result<Router, ServiceError> {
    let app = Router::new()
        .route("/api/ask", post(api::ask))
        .route("/api/search", post(api::search))
        .route("/api/health", get(api::health))
        .route("/api/reindex", post(api::reindex))
        .with_state(state);
    if cors_allowed_origins.is_empty() {
        Ok(app)
    } else {
        Ok(app.layer(cors_layer(cors_allowed_origins)?))
    }
}

/// Loads the index and builds the state. Fails if the index is missing,
/// corrupt, or was embedded with a different provider.
pub fn load_state(cfg: &ServiceConfig) -> Result<Arc<AppState>, ServiceError> {
    let embedder = Embedder::new(cfg.provider.clone())?;
    let index = VectorIndex::load(&cfg.index_path)?;
    if index.fingerprint() != embedder.fingerprint() {
        return Err(ServiceError::FingerprintMismatch {
            index: index.fingerprint().to_string(),
            configured: embedder.fingerprint(),
        });
    }
    let engine = RagEngine::new(embedder, ChatClient::default());
    let state = AppState::new(engine, cfg.retrieval, cfg.generation.clone());
    state.swap_index(index);
    Ok(Arc::new(state))
}

/// A service bound to a socket and running on the current runtime.
pub struct RunningService {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    pub handle: JoinHandle<()>,
}

/// Loads the index, binds `listen_addr` and starts serving in the background.
pub async fn start(cfg: &ServiceConfig) -> Result<RunningService, ServiceError> {
    let state = load_state(cfg)?;
    let app = router(state.clone(), &cfg.cors_allowed_origins)?;
    let bind_err = |source| ServiceError::Bind {
        addr: cfg.listen_addr.clone(),
        source,
    };
    let listener = tokio::net::TcpListener::bind(&cfg.listen_addr).await.map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    tracing::info!(%addr, "listening");
    Ok(RunningService { addr, state, handle })
}

/// Runs until Ctrl-C.
pub async fn serve(cfg: &ServiceConfig) -> Result<(), ServiceError> {
    let running = start(cfg).await?;
    let _ = tokio::signal::ctrl_c().await;
    running.handle.abort();
    Ok(())
}
