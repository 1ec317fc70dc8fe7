use std::sync::{Arc, Mutex};

use medrag_core::embedding::{EmbedError, Embedder, EmbeddingProviderConfig};
use medrag_core::engine::{build_prompt, ChatClient, GenerateError, GenerationConfig};
use medrag_core::retry::RetryPolicy;
use medrag_stubs::{chat_stub, echo_chat, embed_stub, Reply};

fn quick_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay_ms: 10,
    }
}

fn remote(url: &str, dim: usize) -> Embedder {
    let mut cfg = EmbeddingProviderConfig::remote(url, "stub-model", dim);
    cfg.retry = quick_retry();
    Embedder::new(cfg).unwrap()
}

fn gen_cfg(url: &str) -> GenerationConfig {
    GenerationConfig {
        endpoint_url: url.to_string(),
        retry: quick_retry(),
        ..GenerationConfig::default()
    }
}

#[tokio::test]
async fn remote_vectors_are_renormalized() {
    let stub = embed_stub(|c| {
        let vs: Vec<Vec<f32>> = c.inputs.iter().map(|_| vec![3.0, 4.0, 0.0]).collect();
        Reply::embeddings(&vs)
    })
    .await;
    let e = remote(&stub.url(), 3);
    let out = e.embed_batch(&["a".into(), "b".into()]).await.unwrap();
    assert_eq!(out.len(), 2);
    for v in out {
        assert!((v.norm() - 1.0).abs() < 1e-6);
        assert_eq!(v.as_slice(), &[0.6, 0.8, 0.0]);
    }
}

#[tokio::test]
async fn large_batches_are_split_and_order_kept() {
    let sizes = Arc::new(Mutex::new(Vec::new()));
    let seen = sizes.clone();
    let stub = embed_stub(move |c| {
        seen.lock().unwrap().push(c.inputs.len());
        let vs: Vec<Vec<f32>> = c
            .inputs
            .iter()
            .map(|t| {
                let k: f32 = t.trim_start_matches('t').parse().unwrap();
                vec![1.0, k]
            })
            .collect();
        Reply::embeddings(&vs)
    })
    .await;
    let mut cfg = EmbeddingProviderConfig::remote(stub.url(), "stub-model", 2);
    cfg.max_batch = 4;
    let e = Embedder::new(cfg).unwrap();
    let texts: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    let out = e.embed_batch(&texts).await.unwrap();
    assert_eq!(out.len(), 10);
    for (i, v) in out.iter().enumerate() {
        let expect = i as f32 / (1.0 + (i * i) as f32).sqrt();
        assert!((v.as_slice()[1] - expect).abs() < 1e-6);
    }
    let mut s = sizes.lock().unwrap().clone();
    s.sort();
    assert_eq!(s, [2, 4, 4]);
}

#[tokio::test]
async fn persistent_500_exhausts_retries() {
    let stub = embed_stub(|_| Reply::status(500)).await;
    let err = remote(&stub.url(), 3).embed_one("x").await.unwrap_err();
    assert!(matches!(err, EmbedError::ProviderUnreachable { attempts: 3, .. }), "{err:?}");
    assert_eq!(stub.requests(), 3);
}

#[tokio::test]
async fn wrong_arity_is_malformed() {
    let stub = embed_stub(|_| Reply::embeddings(&[vec![1.0, 0.0]])).await;
    let err = remote(&stub.url(), 2)
        .embed_batch(&["a".into(), "b".into()])
        .await
        .unwrap_err();
    assert_eq!(err.code(), "MalformedResponse");
    assert_eq!(stub.requests(), 1);
}

#[tokio::test]
async fn wrong_dimension_is_rejected() {
    let stub = embed_stub(|c| Reply::embeddings(&vec![vec![0.1; 512]; c.inputs.len()])).await;
    let err = remote(&stub.url(), 384).embed_one("x").await.unwrap_err();
    assert!(matches!(err, EmbedError::DimensionMismatch { expected: 384, actual: 512 }), "{err:?}");
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let stub = embed_stub(|_| Reply::status(400)).await;
    let err = remote(&stub.url(), 2).embed_one("x").await.unwrap_err();
    assert_eq!(err.code(), "HttpError");
    assert_eq!(stub.requests(), 1);
}

#[tokio::test]
async fn unreachable_embedding_endpoint() {
    let err = remote("http://127.0.0.1:1", 2).embed_one("x").await.unwrap_err();
    assert!(matches!(err, EmbedError::ProviderUnreachable { attempts: 3, .. }), "{err:?}");
}

#[tokio::test]
async fn echo_returns_rendered_prompt() {
    let stub = echo_chat().await;
    let cfg = gen_cfg(&stub.url());
    let prompt = build_prompt("What causes asthma?", &[], &cfg).unwrap();
    let g = ChatClient::default().generate(&prompt, &cfg).await.unwrap();
    assert_eq!(g.text, prompt.rendered);
    assert_eq!(g.attempts, 1);
}

#[tokio::test]
async fn request_carries_model_and_roles() {
    let seen = Arc::new(Mutex::new(None));
    let s2 = seen.clone();
    let stub = chat_stub(move |c| {
        *s2.lock().unwrap() = Some((c.model.clone(), c.messages.iter().map(|m| m.role.clone()).collect::<Vec<_>>()));
        Reply::completion("ok")
    })
    .await;
    let cfg = GenerationConfig {
        model_name: "tuned-7b".into(),
        ..gen_cfg(&stub.url())
    };
    let prompt = build_prompt("q", &[], &cfg).unwrap();
    ChatClient::default().generate(&prompt, &cfg).await.unwrap();
    let (model, roles) = seen.lock().unwrap().clone().unwrap();
    assert_eq!(model, "tuned-7b");
    assert_eq!(roles, ["system", "user"]);
}

#[tokio::test]
async fn whitespace_completion_is_empty() {
    let stub = chat_stub(|_| Reply::completion("  \n ")).await;
    let cfg = gen_cfg(&stub.url());
    let prompt = build_prompt("q", &[], &cfg).unwrap();
    let err = ChatClient::default().generate(&prompt, &cfg).await.unwrap_err();
    assert!(matches!(err, GenerateError::EmptyCompletion));
    assert_eq!(stub.requests(), 1);
}

#[tokio::test]
async fn one_503_then_success() {
    let stub = chat_stub(|c| if c.n == 1 { Reply::status(503) } else { Reply::completion("fine") }).await;
    let cfg = gen_cfg(&stub.url());
    let prompt = build_prompt("q", &[], &cfg).unwrap();
    let g = ChatClient::default().generate(&prompt, &cfg).await.unwrap();
    assert_eq!(g.text, "fine");
    assert_eq!(g.attempts, 2);
}

#[tokio::test]
async fn chat_failures_map_to_codes() {
    let down = chat_stub(|_| Reply::status(502)).await;
    let cfg = gen_cfg(&down.url());
    let prompt = build_prompt("q", &[], &cfg).unwrap();
    let err = ChatClient::default().generate(&prompt, &cfg).await.unwrap_err();
    assert!(matches!(err, GenerateError::BackendUnreachable { attempts: 3, .. }));
    assert_eq!(down.requests(), 3);

    let bad = chat_stub(|_| Reply::status(422)).await;
    let cfg = gen_cfg(&bad.url());
    let err = ChatClient::default().generate(&prompt, &cfg).await.unwrap_err();
    assert!(matches!(err, GenerateError::BackendError { status: 422, .. }));

    let junk = chat_stub(|_| Reply::json(serde_json::json!({"nope": 1}))).await;
    let cfg = gen_cfg(&junk.url());
    let err = ChatClient::default().generate(&prompt, &cfg).await.unwrap_err();
    assert_eq!(err.code(), "MalformedResponse");
}
