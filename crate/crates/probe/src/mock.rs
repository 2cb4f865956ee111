//! Fixture-backed stand-in for an OpenAI-compatible endpoint.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

pub const HASH_EMBED_DIM: usize = 64;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    /// Completion per exact prompt.
    #[serde(default)]
    pub completions: HashMap<String, String>,
    /// Reply for prompts not in `completions`.
    #[serde(default)]
    pub default_completion: Option<String>,
    /// Reply with the prompt's last line instead of failing on unknown prompts.
    #[serde(default)]
    pub echo_unknown: bool,
    /// Planted embeddings per text; other texts get a hashed bag of words.
    #[serde(default)]
    pub embeddings: HashMap<String, Vec<f64>>,
    /// Answer this many initial requests with 503.
    #[serde(default)]
    pub fail_first: usize,
}

/// Deterministic bag-of-words embedding: each token adds a signed unit to a
/// hashed coordinate.
pub fn hash_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; HASH_EMBED_DIM];
    for token in text.split_whitespace() {
        let digest = Sha256::digest(token.as_bytes());
        let slot = digest[0] as usize % HASH_EMBED_DIM;
        let sign = if digest[1] & 1 == 0 { 1.0 } else { -1.0 };
        v[slot] += sign;
    }
    v
}

struct Shared {
    fixture: MockFixture,
    requests: AtomicUsize,
}

fn fail(shared: &Shared) -> bool {
    shared.requests.fetch_add(1, Ordering::SeqCst) < shared.fixture.fail_first
}

async fn chat(State(shared): State<Arc<Shared>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if fail(&shared) {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "warming up"})));
    }
    let Some(prompt) = body.pointer("/messages/0/content").and_then(Value::as_str) else {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "missing messages"})));
    };
    let fx = &shared.fixture;
    let reply = match fx.completions.get(prompt) {
        Some(r) => r.clone(),
        None if fx.echo_unknown => prompt.lines().last().unwrap_or_default().to_string(),
        None => match &fx.default_completion {
            Some(d) => d.clone(),
            None => return (StatusCode::NOT_FOUND, Json(json!({"error": "unknown prompt"}))),
        },
    };
    (
        StatusCode::OK,
        Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": reply}}]})),
    )
}

async fn embeddings(State(shared): State<Arc<Shared>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if fail(&shared) {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "warming up"})));
    }
    let inputs: Vec<String> = match body.get("input") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(a)) => a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect(),
        _ => return (StatusCode::BAD_REQUEST, Json(json!({"error": "missing input"}))),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let e = shared.fixture.embeddings.get(t).cloned().unwrap_or_else(|| hash_embedding(t));
            json!({"object": "embedding", "index": i, "embedding": e})
        })
        .collect();
    (StatusCode::OK, Json(json!({"object": "list", "data": data})))
}

pub fn router(fixture: MockFixture) -> (Router, Arc<AtomicUsize>) {
    let shared = Arc::new(Shared {
        fixture,
        requests: AtomicUsize::new(0),
    });
    let counter = Arc::new(AtomicUsize::new(0));
    let count = Arc::clone(&counter);
    let app = Router::new()
        .route("/chat/completions", post(chat))
        .route("/embeddings", post(embeddings))
        .layer(axum::middleware::from_fn(move |req, next: axum::middleware::Next| {
            let count = Arc::clone(&count);
            async move {
                count.fetch_add(1, Ordering::SeqCst);
                next.run(req).await
            }
        }))
        .with_state(shared);
    (app, counter)
}

/// A mock endpoint running on a background task until dropped.
pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockServer {
    pub async fn start(fixture: MockFixture) -> std::io::Result<Self> {
        Self::bind(fixture, "127.0.0.1:0".parse().unwrap()).await
    }

    pub async fn bind(fixture: MockFixture, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (app, requests) = router(fixture);
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer {
            addr,
            requests,
            shutdown: Some(tx),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
