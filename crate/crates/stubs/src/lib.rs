//! In-process stand-ins for the chat-completions and embeddings backends.
//!
//! Each stub binds `127.0.0.1:0`, counts requests, and answers through a
//! closure so tests can script statuses, delays and payloads.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::task::JoinHandle;

/// What a stub sends back for one request.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
    pub delay: Duration,
}

impl Reply {
    pub fn json(body: Value) -> Self {
        Self {
            status: 200,
            body,
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: json!({ "error": format!("stub status {status}") }),
            delay: Duration::ZERO,
        }
    }

    /// A chat completion whose single choice carries `content`.
    pub fn completion(content: impl Into<String>) -> Self {
        Self::json(json!({
            "choices": [{ "index": 0, "message": { "role": "assistant", "content": content.into() } }]
        }))
    }

    /// An embeddings response with one datum per vector.
    pub fn embeddings(vectors: &[Vec<f32>]) -> Self {
        let data: Vec<Value> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| json!({ "index": i, "embedding": v }))
            .collect();
        Self::json(json!({ "data": data }))
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// A chat request as the stub sees it.
#[derive(Debug, Clone)]
pub struct ChatCall {
    /// 1-based request number on this stub.
    pub n: usize,
    pub model: String,
    pub messages: Vec<Message>,
}

impl ChatCall {
    /// Message contents joined with newlines.
    pub fn joined(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Text following the last `Question: ` line, up to the end of that line.
    pub fn question(&self) -> Option<String> {
        let all = self.joined();
        let start = all.rfind("Question: ")? + "Question: ".len();
        Some(all[start..].lines().next().unwrap_or("").to_string())
    }
}

/// An embeddings request as the stub sees it.
#[derive(Debug, Clone)]
pub struct EmbedCall {
    pub n: usize,
    pub model: String,
    pub inputs: Vec<String>,
}

#[derive(Deserialize)]
struct ChatBody {
    #[serde(default)]
    model: String,
    messages: Vec<Message>,
}

#[derive(Deserialize)]
struct EmbedBody {
    #[serde(default)]
    model: String,
    input: Vec<String>,
}

type Handler<C> = Arc<dyn Fn(C) -> Reply + Send + Sync>;

struct Shared<C> {
    count: Arc<AtomicUsize>,
    handler: Handler<C>,
}

impl<C> Clone for Shared<C> {
    fn clone(&self) -> Self {
        Self {
            count: self.count.clone(),
            handler: self.handler.clone(),
        }
    }
}

async fn respond(reply: Reply) -> Response {
    if !reply.delay.is_zero() {
        tokio::time::sleep(reply.delay).await;
    }
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(reply.body)).into_response()
}

async fn chat_route(State(s): State<Shared<ChatCall>>, Json(body): Json<ChatBody>) -> Response {
    let n = s.count.fetch_add(1, Ordering::SeqCst) + 1;
    let reply = (s.handler)(ChatCall {
        n,
        model: body.model,
        messages: body.messages,
    });
    respond(reply).await
}

async fn embed_route(State(s): State<Shared<EmbedCall>>, Json(body): Json<EmbedBody>) -> Response {
    let n = s.count.fetch_add(1, Ordering::SeqCst) + 1;
    let reply = (s.handler)(EmbedCall {
        n,
        model: body.model,
        inputs: body.input,
    });
    respond(reply).await
}

/// A running stub. The server stops when this is dropped.
pub struct StubServer {
    addr: SocketAddr,
    count: Arc<AtomicUsize>,
    task: JoinHandle<()>,
}

impl StubServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    async fn start(router: Router, count: Arc<AtomicUsize>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind stub");
        let addr = listener.local_addr().expect("stub addr");
        let task = tokio::spawn(async move {
            axum::serve(listener, router).await.expect("stub server");
        });
        Self { addr, count, task }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serves `POST /v1/chat/completions`.
pub async fn chat_stub(handler: impl Fn(ChatCall) -> Reply + Send + Sync + 'static) -> StubServer {
    let count = Arc::new(AtomicUsize::new(0));
    let state = Shared::<ChatCall> {
        count: count.clone(),
        handler: Arc::new(handler),
    };
    let router = Router::new()
        .route("/v1/chat/completions", post(chat_route))
        .with_state(state);
    StubServer::start(router, count).await
}

/// Chat stub that answers with its input messages joined by newlines.
pub async fn echo_chat() -> StubServer {
    chat_stub(|c| Reply::completion(c.joined())).await
}

/// Chat stub that always answers `text`.
pub async fn fixed_chat(text: impl Into<String>) -> StubServer {
    let text = text.into();
    chat_stub(move |_| Reply::completion(text.clone())).await
}

/// Serves `POST /v1/embeddings`.
pub async fn embed_stub(handler: impl Fn(EmbedCall) -> Reply + Send + Sync + 'static) -> StubServer {
    let count = Arc::new(AtomicUsize::new(0));
    let state = Shared::<EmbedCall> {
        count: count.clone(),
        handler: Arc::new(handler),
    };
    let router = Router::new()
        .route("/v1/embeddings", post(embed_route))
        .with_state(state);
    StubServer::start(router, count).await
}
