//! Text embeddings and cosine similarity used by similarity-driven seed selection.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector has zero norm or non-finite components")]
    Degenerate,
    #[error("no embedding registered for {0:?}")]
    UnknownText(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Scales `raw` to unit Euclidean norm.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, EmbedError> {
        if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Degenerate);
        }
        let norm = l2_norm(&raw);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::Degenerate);
        }
        Ok(Self {
            values: raw.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// dot(u, v) / (|u| |v|), clamped to [-1, 1].
pub fn cosine_raw(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let denom = l2_norm(u) * l2_norm(v);
    if denom == 0.0 {
        return Err(EmbedError::Degenerate);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine_raw(&u.values, &v.values)
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

/// Offline embedder: hashes (seed, text) into a ChaCha seed and draws a
/// Gaussian vector, which is uniform on the sphere after normalization.
#[derive(Debug, Clone, Copy)]
pub struct StubEmbedder {
    seed: u64,
    dimension: usize,
}

impl StubEmbedder {
    pub const DEFAULT_DIMENSION: usize = 64;

    pub fn new(seed: u64, dimension: usize) -> Self {
        Self {
            seed,
            dimension: dimension.max(1),
        }
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(0, Self::DEFAULT_DIMENSION)
    }
}

impl Embedder for StubEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let raw: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        EmbeddingVector::normalized(raw)
    }
}

/// Embedder backed by an explicit text -> raw vector table.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, text: impl Into<String>, raw: Vec<f64>) {
        self.table.insert(text.into(), raw);
    }

    pub fn with(mut self, text: impl Into<String>, raw: Vec<f64>) -> Self {
        self.insert(text, raw);
        self
    }
}

impl Embedder for TableEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let raw = self
            .table
            .get(text)
            .ok_or_else(|| EmbedError::UnknownText(text.to_owned()))?;
        EmbeddingVector::normalized(raw.clone())
    }
}

/// Per-run memoization in front of any embedder.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(hit) = self.cache.lock().unwrap().get(text) {
            return Ok(hit.clone());
        }
        // computed outside the lock; concurrent misses on one key race and the last insert wins
        let vector = self.inner.embed(text)?;
        self.cache
            .lock()
            .unwrap()
            .insert(text.to_owned(), vector.clone());
        Ok(vector)
    }
}

#[cfg(feature = "http")]
pub use http::HttpEmbedder;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{EmbedError, Embedder, EmbeddingVector};
    use crate::backend::{endpoint, send_error, status_error, BackendError, API_KEY_VAR};

    /// Client for an OpenAI-compatible `/embeddings` endpoint.
    pub struct HttpEmbedder {
        client: reqwest::blocking::Client,
        url: String,
        model: String,
        api_key: String,
    }

    #[derive(Serialize)]
    struct Body<'a> {
        model: &'a str,
        input: &'a str,
    }

    #[derive(Deserialize)]
    struct Response {
        data: Vec<Item>,
    }

    #[derive(Deserialize)]
    struct Item {
        embedding: Vec<f64>,
    }

    impl HttpEmbedder {
        pub fn new(base_url: &str, model: &str, api_key: String, timeout: Duration) -> Result<Self, EmbedError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .map_err(|e| EmbedError::Transport(e.to_string()))?;
            Ok(Self {
                client,
                url: endpoint(base_url, "embeddings"),
                model: model.to_owned(),
                api_key,
            })
        }

        pub fn from_env(base_url: &str, model: &str, timeout: Duration) -> Result<Self, EmbedError> {
            let key = std::env::var(API_KEY_VAR)
                .map_err(|_| EmbedError::Auth(format!("{API_KEY_VAR} is not set")))?;
            Self::new(base_url, model, key, timeout)
        }
    }

    fn convert(err: BackendError) -> EmbedError {
        match err {
            BackendError::Auth(msg) => EmbedError::Auth(msg),
            other => EmbedError::Transport(other.to_string()),
        }
    }

    pub(crate) fn parse_embedding(body: &str) -> Result<EmbeddingVector, EmbedError> {
        let parsed: Response =
            serde_json::from_str(body).map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        let first = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::MalformedResponse("empty data array".into()))?;
        EmbeddingVector::normalized(first.embedding)
    }

    impl Embedder for HttpEmbedder {
        fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
            if text.is_empty() {
                return Err(EmbedError::EmptyText);
            }
            let response = self
                .client
                .post(&self.url)
                .bearer_auth(&self.api_key)
                .json(&Body {
                    model: &self.model,
                    input: text,
                })
                .send()
                .map_err(|e| convert(send_error(e)))?;
            let status = response.status().as_u16();
            let body = response.text().map_err(|e| convert(send_error(e)))?;
            if !(200..300).contains(&status) {
                return Err(convert(status_error(status, body)));
            }
            parse_embedding(&body)
        }
    }
}
