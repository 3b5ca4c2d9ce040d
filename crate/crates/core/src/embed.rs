//! Embedding providers: a deterministic hashed trigram embedder and a remote
//! HTTP client. All vectors leave this module L2-normalized.

use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::fold_char;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("unknown embedder id {0:?}")]
    UnknownEmbedder(String),
}

/// A fixed-length, unit-norm vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalize raw values. An all-zero input becomes the uniform vector.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimMismatch {
                expected: 1,
                got: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Self::uniform(values.len()));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self { values })
    }

    /// All components equal, unit norm.
    pub fn uniform(dim: usize) -> Self {
        let c = 1.0 / (dim as f64).sqrt();
        Self {
            values: vec![c; dim],
        }
    }

    /// Wrap values already known to be unit-norm (e.g. loaded from disk).
    pub fn from_normalized_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Self) -> Result<f64, EmbedError> {
        if self.dim() != other.dim() {
            return Err(EmbedError::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn neg(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

/// Deterministic text embedder with a fixed output dimension.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier recorded in index manifests.
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    /// Embed in input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

/// Hashed character 3-gram counts folded into `dim` buckets.
///
/// Text is lowercased char by char. Texts shorter than three chars count as a
/// single gram; empty text maps to the uniform vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedTrigramEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashedTrigramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, 0)
    }
}

const ID_PREFIX: &str = "hash3-v1";

impl HashedTrigramEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn key(&self) -> u64 {
        0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    /// Bucket of one gram.
    pub fn bucket(&self, gram: &str) -> usize {
        let mut h = FnvHasher::with_key(self.key());
        h.write(gram.as_bytes());
        (h.finish() % self.dim as u64) as usize
    }

    /// Grams of `text` after folding.
    pub fn grams(text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().map(fold_char).collect();
        match chars.len() {
            0 => Vec::new(),
            1 | 2 => vec![chars.iter().collect()],
            _ => chars.windows(3).map(|w| w.iter().collect()).collect(),
        }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0; self.dim];
        for g in Self::grams(text) {
            counts[self.bucket(&g)] += 1.0;
        }
        EmbeddingVector::normalized(counts).expect("finite counts")
    }

    /// Parse an id produced by [`EmbeddingProvider::id`].
    pub fn from_id(id: &str) -> Option<Self> {
        let mut parts = id.split(':');
        if parts.next()? != ID_PREFIX {
            return None;
        }
        let dim = parts.next()?.strip_prefix("dim")?.parse().ok()?;
        let seed = parts.next()?.strip_prefix("seed")?.parse().ok()?;
        if parts.next().is_some() || dim == 0 {
            return None;
        }
        Some(Self::new(dim, seed))
    }
}

impl EmbeddingProvider for HashedTrigramEmbedder {
    fn id(&self) -> String {
        format!("{ID_PREFIX}:dim{}:seed{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// HTTP embedder: `POST {texts: [..]}` returning `{vectors: [[..]]}`.
///
/// Batches are sent concurrently up to `max_in_flight`; results keep input
/// order. Empty texts are not sent and map to the uniform vector.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    dim: usize,
    batch_size: usize,
    max_in_flight: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            dim,
            batch_size: 32,
            max_in_flight: 8,
            agent,
        }
    }

    pub fn with_concurrency(mut self, batch_size: usize, max_in_flight: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Parse an id of the form `remote:dim<N>:<url>`.
    pub fn from_id(id: &str) -> Option<Self> {
        let rest = id.strip_prefix("remote:")?;
        let (dim, url) = rest.split_once(':')?;
        let dim = dim.strip_prefix("dim")?.parse().ok()?;
        Some(Self::new(url, dim))
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let unavailable =
            |e: ureq::Error| EmbedError::ProviderUnavailable(format!("{}: {e}", self.endpoint));
        let resp: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(unavailable)?
            .body_mut()
            .read_json()
            .map_err(unavailable)?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "{}: expected {} vectors, got {}",
                self.endpoint,
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:dim{}:{}", self.dim, self.endpoint)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let pending: Vec<(usize, &str)> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .map(|(i, t)| (i, *t))
            .collect();
        let mut out: Vec<Option<EmbeddingVector>> = texts
            .iter()
            .map(|t| t.is_empty().then(|| EmbeddingVector::uniform(self.dim)))
            .collect();
        let batches: Vec<&[(usize, &str)]> = pending.chunks(self.batch_size).collect();
        for wave in batches.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<EmbeddingVector>, EmbedError>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| {
                        s.spawn(move || {
                            let body: Vec<&str> = batch.iter().map(|(_, t)| *t).collect();
                            self.request(&body)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| {
                            Err(EmbedError::ProviderUnavailable("worker panicked".into()))
                        })
                    })
                    .collect()
            });
            for (batch, result) in wave.iter().zip(results) {
                for ((i, _), v) in batch.iter().zip(result?) {
                    out[*i] = Some(v);
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every slot filled"))
            .collect())
    }
}

/// Rebuild a provider from a manifest id.
pub fn provider_from_id(id: &str) -> Result<Box<dyn EmbeddingProvider>, EmbedError> {
    if let Some(p) = HashedTrigramEmbedder::from_id(id) {
        return Ok(Box::new(p));
    }
    if let Some(p) = RemoteEmbedder::from_id(id) {
        return Ok(Box::new(p));
    }
    Err(EmbedError::UnknownEmbedder(id.to_string()))
}
