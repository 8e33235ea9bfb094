//! Text embeddings and cosine similarity.
//!
//! Two providers ship with the crate: [`HashedBowProvider`], an offline
//! hashed bag-of-tokens that keeps the whole pipeline hermetic, and
//! [`RemoteEmbeddingProvider`] for an OpenAI-compatible embeddings endpoint.
//! [`CachedProvider`] wraps either one with a memo keyed by the SHA-256 of
//! the text.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Dimension of the default hashed bag-of-tokens provider.
pub const HASHED_BOW_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text has no alphanumeric tokens: {0:?}")]
    NoTokens(String),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine similarity undefined for an all-zero vector")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedding transport error at {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("malformed embedding reply: {0}")]
    Malformed(String),
    #[error("embedding cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    provider_id: String,
}

impl Embedding {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self {
            values,
            provider_id: provider_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            provider_id: self.provider_id.clone(),
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimMismatch(a.len(), b.len()));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// A pairwise similarity over embeddings.
pub trait SimilarityMetric: Send + Sync {
    fn name(&self) -> &'static str;
    fn similarity(&self, a: &Embedding, b: &Embedding) -> Result<f64, EmbedError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Cosine;

impl SimilarityMetric for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn similarity(&self, a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
        cosine_similarity(a, b)
    }
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// 64-bit FNV-1a, used only for bucket assignment.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// L2-normalised token counts hashed into a fixed number of buckets.
#[derive(Debug, Clone)]
pub struct HashedBowProvider {
    dim: usize,
    id: String,
}

impl Default for HashedBowProvider {
    fn default() -> Self {
        Self::new(HASHED_BOW_DIM)
    }
}

impl HashedBowProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            id: format!("hashed-bow-{dim}"),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl EmbeddingProvider for HashedBowProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbedError::NoTokens(text.to_string()));
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v[self.bucket(t)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Embedding::new(v, self.id.clone())
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct RemoteEmbeddingProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    id: String,
    client: reqwest::blocking::Client,
}

impl RemoteEmbeddingProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let endpoint = endpoint.into();
        let model = model.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport {
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })?;
        Ok(Self {
            id: format!("remote-{model}"),
            endpoint,
            model,
            api_key,
            dim,
            client,
        })
    }
}

/// Reads `data[0].embedding` from an embeddings response body.
pub fn parse_embedding_response(body: &str) -> Result<Vec<f64>, EmbedError> {
    let v: Value = serde_json::from_str(body).map_err(|e| EmbedError::Malformed(e.to_string()))?;
    let arr = v
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| EmbedError::Malformed("missing data[0].embedding".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| EmbedError::Malformed("non-numeric embedding value".into()))
        })
        .collect()
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut rb = self
            .client
            .post(&self.endpoint)
            .json(&json!({"model": self.model, "input": text}));
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| EmbedError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let resp = rb.send().map_err(transport)?;
        let status = resp.status();
        let body = resp.text().map_err(transport)?;
        if !status.is_success() {
            return Err(EmbedError::Transport {
                endpoint: self.endpoint.clone(),
                message: format!("HTTP {status}: {body}"),
            });
        }
        let values = parse_embedding_response(&body)?;
        if values.len() != self.dim {
            return Err(EmbedError::DimMismatch(values.len(), self.dim));
        }
        Embedding::new(values, self.id.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    provider_id: String,
    values: Vec<f64>,
}

/// Memoizing wrapper keyed by `(provider_id, sha256(text))`, optionally backed
/// by one JSON file per entry under `dir/<provider_id>/`.
pub struct CachedProvider<P> {
    inner: P,
    dir: Option<PathBuf>,
    memo: Mutex<HashMap<String, Embedding>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn in_memory(inner: P) -> Self {
        Self {
            inner,
            dir: None,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(inner: P, dir: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let dir = dir.into().join(sanitize(inner.id()));
        fs::create_dir_all(&dir).map_err(|e| EmbedError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            inner,
            dir: Some(dir),
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.memo.lock().expect("embedding memo poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let key = hex::encode(Sha256::digest(text.as_bytes()));
        if let Some(e) = self.memo.lock().expect("embedding memo poisoned").get(&key) {
            return Ok(e.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("{key}.json")));
        if let Some(p) = &path {
            if let Ok(bytes) = fs::read(p) {
                match serde_json::from_slice::<CacheEntry>(&bytes) {
                    Ok(entry) if entry.provider_id == self.inner.id() && entry.values.len() == self.inner.dim() => {
                        let e = Embedding::new(entry.values, entry.provider_id)?;
                        self.memo
                            .lock()
                            .expect("embedding memo poisoned")
                            .insert(key, e.clone());
                        return Ok(e);
                    }
                    _ => log::warn!("ignoring stale embedding cache entry {}", p.display()),
                }
            }
        }
        let e = self.inner.embed(text)?;
        if let Some(p) = &path {
            let entry = CacheEntry {
                provider_id: e.provider_id().to_string(),
                values: e.values().to_vec(),
            };
            let body = serde_json::to_vec(&entry).map_err(|err| EmbedError::Cache(err.to_string()))?;
            fs::write(p, body).map_err(|err| EmbedError::Cache(format!("{}: {err}", p.display())))?;
        }
        self.memo
            .lock()
            .expect("embedding memo poisoned")
            .insert(key, e.clone());
        Ok(e)
    }
}
