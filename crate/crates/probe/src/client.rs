//! Minimal OpenAI-compatible client: chat completions and embeddings, with
//! retries and an optional response cache.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::{cache_key, Cache};
use crate::error::{ProbeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 200,
        }
    }
}

/// Texts per embeddings request.
pub const EMBED_BATCH: usize = 64;

pub struct Client {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
    retry: RetryPolicy,
    cache: Option<Cache>,
    requests: AtomicUsize,
}

fn chat_content(body: &Value) -> Result<String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProbeError::Decode("missing choices[0].message.content".into()))
}

fn embedding_rows(body: &Value, expected: usize) -> Result<Vec<Vec<f64>>> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| ProbeError::Decode("missing data array".into()))?;
    if data.len() != expected {
        return Err(ProbeError::Decode(format!("{} embeddings for {expected} inputs", data.len())));
    }
    let mut rows = vec![Vec::new(); expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let vector = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProbeError::Decode("missing embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ProbeError::Decode("non-numeric embedding".into())))
            .collect::<Result<Vec<f64>>>()?;
        *rows
            .get_mut(index)
            .ok_or_else(|| ProbeError::Decode(format!("embedding index {index} out of range")))? = vector;
    }
    Ok(rows)
}

impl Client {
    /// `token_env` names the environment variable holding a bearer token;
    /// an unset variable means no authorization header.
    pub fn new(base: &str, token_env: Option<&str>, retry: RetryPolicy, cache: Option<Cache>, timeout: Duration) -> Result<Self> {
        if retry.max_attempts == 0 {
            return Err(ProbeError::Config("retry policy needs at least one attempt".into()));
        }
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProbeError::Transport(e.to_string()))?;
        Ok(Client {
            http,
            base: base.trim_end_matches('/').to_string(),
            token: token_env.and_then(|v| std::env::var(v).ok()),
            retry,
            cache,
            requests: AtomicUsize::new(0),
        })
    }

    /// Network requests issued so far (cache hits excluded).
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    async fn post_once(&self, path: &str, body: &Value) -> Result<Value> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.http.post(format!("{}/{path}", self.base)).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| ProbeError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ProbeError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProbeError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| ProbeError::Decode(e.to_string()))
    }

    /// Retries transport errors, 429 and 5xx with exponential backoff.
    async fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(path, body).await {
                Ok(v) => return Ok(v),
                Err(e) => {
                    let retriable = match &e {
                        ProbeError::Transport(_) => true,
                        ProbeError::Status { status, .. } => *status == 429 || *status >= 500,
                        _ => false,
                    };
                    if !retriable || attempt >= self.retry.max_attempts {
                        return Err(e);
                    }
                    let wait = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    tokio::time::sleep(Duration::from_millis(wait)).await;
                }
            }
        }
    }

    /// Greedy (temperature 0) completion of a single user message.
    pub async fn complete(&self, model: &str, prompt: &str) -> Result<String> {
        let key = cache_key("chat", model, prompt);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get::<String>(&key).await {
                return Ok(hit);
            }
        }
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let content = chat_content(&self.post("chat/completions", &body).await?)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &content).await?;
        }
        Ok(content)
    }

    /// Embeddings for `texts`, served from the cache where possible and
    /// batched otherwise.
    pub async fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let keys: Vec<String> = texts.iter().map(|t| cache_key("embed", model, t)).collect();
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        if let Some(cache) = &self.cache {
            for (slot, key) in out.iter_mut().zip(&keys) {
                *slot = cache.get(key).await;
            }
        }
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        for chunk in missing.chunks(EMBED_BATCH) {
            let input: Vec<&str> = chunk.iter().map(|&i| texts[i].as_str()).collect();
            let body = json!({"model": model, "input": input});
            let rows = embedding_rows(&self.post("embeddings", &body).await?, chunk.len())?;
            for (&i, row) in chunk.iter().zip(rows) {
                if let Some(cache) = &self.cache {
                    cache.put(&keys[i], &row).await?;
                }
                out[i] = Some(row);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}
