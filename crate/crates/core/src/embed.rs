//! Embedding providers, the exact full-scan vector index and its build-once cache.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Chunk, ChunkingPolicy};
use crate::limits::InFlightLimiter;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {message}")]
    ProviderUnavailable {
        message: String,
        retry_after: Option<Duration>,
    },
    #[error("text at position {0} is empty")]
    EmptyText(usize),
    #[error("no texts to embed")]
    NoTexts,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("index is empty")]
    EmptyIndex,
    #[error("duplicate chunk key ({0}, {1}) in index")]
    DuplicateKey(String, usize),
    #[error("index was built with provider `{found}`, current provider is `{expected}`")]
    ProviderMismatch { expected: String, found: String },
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }
}

/// Cosine similarity `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Something that turns text into vectors. Implementations must be safe to call
/// from several threads at once.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier; persisted indexes record it and refuse to load under a
    /// different provider.
    fn provider_id(&self) -> String;

    /// Embeds a batch of already-validated, non-empty texts.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn provider_id(&self) -> String {
        (**self).provider_id()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

/// Validates the batch and embeds it, preserving order.
pub fn embed_texts<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::NoTexts);
    }
    if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText(pos));
    }
    let vectors = provider.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbedError::ProviderUnavailable {
            message: format!(
                "provider returned {} vectors for {} texts",
                vectors.len(),
                texts.len()
            ),
            retry_after: None,
        });
    }
    Ok(vectors)
}

/// Deterministic embedder that hashes character n-grams into a fixed number of
/// buckets.
///
/// The rule: lowercase the text, collapse whitespace runs to one space, pad
/// with a space on both sides, then for every window of `n` chars add 1.0 to
/// bucket `fnv1a64(window utf-8 bytes) mod dim`. Every non-empty text yields a
/// non-zero, non-negative vector.
#[derive(Debug, Clone)]
pub struct HashNgramEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl Default for HashNgramEmbedder {
    fn default() -> Self {
        Self { dim: 256, n: 3 }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x100000001b3)
    })
}

impl HashNgramEmbedder {
    pub fn new(dim: usize, n: usize) -> Self {
        assert!(dim > 0 && n > 0, "dim and n must be positive");
        Self { dim, n }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let normalized = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let padded: Vec<char> = format!(" {normalized} ").chars().collect();
        let mut values = vec![0.0; self.dim];
        let mut buf = String::new();
        for window in padded.windows(self.n.min(padded.len())) {
            buf.clear();
            buf.extend(window);
            values[(fnv1a64(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        EmbeddingVector(values)
    }
}

impl EmbeddingProvider for HashNgramEmbedder {
    fn provider_id(&self) -> String {
        format!("mock-ngram-{}-d{}", self.n, self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Settings for [`HttpEmbedder`]. The API key is read from `api_key_env` at
/// call time and never stored in config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_embed_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_embed_key_env() -> String {
    "CQWB_API_KEY".into()
}
fn default_in_flight() -> usize {
    4
}
fn default_batch() -> usize {
    64
}
fn default_timeout_secs() -> u64 {
    60
}

/// Embedding client for the common `POST {endpoint}` JSON protocol:
/// request `{"model": ..., "input": [..]}`, response
/// `{"data": [{"index": i, "embedding": [..]}, ..]}`.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    agent: ureq::Agent,
    limiter: InFlightLimiter,
}

#[derive(Serialize)]
struct EmbedRequestBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponseBody {
    data: Vec<EmbedResponseItem>,
}

#[derive(Deserialize)]
struct EmbedResponseItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let agent = crate::http::agent(config.timeout_secs);
        let limiter = InFlightLimiter::new(config.max_in_flight.max(1));
        Self {
            config,
            agent,
            limiter,
        }
    }

    fn post(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let _permit = self.limiter.acquire();
        let body = EmbedRequestBody {
            model: &self.config.model,
            input: batch,
        };
        let parsed: EmbedResponseBody = crate::http::post_json(
            &self.agent,
            &self.config.endpoint,
            &self.config.api_key_env,
            &body,
        )
        .map_err(|e| EmbedError::ProviderUnavailable {
            message: e.message,
            retry_after: e.retry_after,
        })?;
        let mut items = parsed.data;
        if items.iter().all(|i| i.index.is_some()) {
            items.sort_by_key(|i| i.index);
        }
        items
            .into_iter()
            .map(|i| EmbeddingVector::new(i.embedding))
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn provider_id(&self) -> String {
        format!("http:{}@{}", self.config.model, self.config.endpoint)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.batch_size.max(1)) {
            out.extend(self.post(batch)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk: Chunk,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk: Chunk,
    pub score: f64,
}

/// Immutable store of chunk vectors searched by exact full scan.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    provider_id: String,
    dim: usize,
    entries: Vec<IndexEntry>,
}

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    provider_id: String,
    dim: usize,
    entries: usize,
}

impl VectorIndex {
    pub fn from_entries(provider_id: String, entries: Vec<IndexEntry>) -> Result<Self, EmbedError> {
        let first = entries.first().ok_or(EmbedError::EmptyIndex)?;
        let dim = first.vector.dim();
        let mut seen = std::collections::HashSet::new();
        for entry in &entries {
            if entry.vector.dim() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    actual: entry.vector.dim(),
                });
            }
            if !seen.insert((entry.chunk.doc_id.as_str(), entry.chunk.chunk_index)) {
                return Err(EmbedError::DuplicateKey(
                    entry.chunk.doc_id.clone(),
                    entry.chunk.chunk_index,
                ));
            }
        }
        Ok(Self {
            provider_id,
            dim,
            entries,
        })
    }

    /// Embeds every chunk with `provider` and builds the index.
    pub fn build<P: EmbeddingProvider + ?Sized>(
        provider: &P,
        chunks: Vec<Chunk>,
    ) -> Result<Self, EmbedError> {
        if chunks.is_empty() {
            return Err(EmbedError::EmptyIndex);
        }
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embed_texts(provider, &texts)?;
        let entries = chunks
            .into_iter()
            .zip(vectors)
            .map(|(chunk, vector)| IndexEntry { chunk, vector })
            .collect();
        Self::from_entries(provider.provider_id(), entries)
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Highest-scoring `k` chunks, ties broken by `(doc_id, chunk_index)`.
    pub fn retrieve_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, EmbedError> {
        if self.entries.is_empty() {
            return Err(EmbedError::EmptyIndex);
        }
        if query.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let mut scored = Vec::with_capacity(self.entries.len());
        for (i, entry) in self.entries.iter().enumerate() {
            scored.push((cosine(query, &entry.vector)?, i));
        }
        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| {
                self.entries[a.1]
                    .chunk
                    .key()
                    .cmp(&self.entries[b.1].chunk.key())
            })
        };
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(score, i)| RetrievalHit {
                chunk: self.entries[i].chunk.clone(),
                score,
            })
            .collect())
    }

    /// Writes a JSON-lines file: a header line, then one entry per line.
    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = IndexHeader {
            format: "cqwb-vector-index".into(),
            version: INDEX_FORMAT_VERSION,
            provider_id: self.provider_id.clone(),
            dim: self.dim,
            entries: self.entries.len(),
        };
        let to_fmt = |e: serde_json::Error| EmbedError::Format(e.to_string());
        serde_json::to_writer(&mut w, &header).map_err(to_fmt)?;
        w.write_all(b"\n")?;
        for entry in &self.entries {
            serde_json::to_writer(&mut w, entry).map_err(to_fmt)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads an index and checks it was built by `expected_provider`.
    pub fn load(path: &Path, expected_provider: &str) -> Result<Self, EmbedError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| EmbedError::Format("missing header".into()))??;
        let header: IndexHeader =
            serde_json::from_str(&header_line).map_err(|e| EmbedError::Format(e.to_string()))?;
        if header.format != "cqwb-vector-index" || header.version != INDEX_FORMAT_VERSION {
            return Err(EmbedError::Format(format!(
                "unsupported index format {} v{}",
                header.format, header.version
            )));
        }
        if header.provider_id != expected_provider {
            return Err(EmbedError::ProviderMismatch {
                expected: expected_provider.to_string(),
                found: header.provider_id,
            });
        }
        let mut entries = Vec::with_capacity(header.entries);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry =
                serde_json::from_str(&line).map_err(|e| EmbedError::Format(e.to_string()))?;
            entries.push(entry);
        }
        if entries.len() != header.entries {
            return Err(EmbedError::Format(format!(
                "header declares {} entries, file has {}",
                header.entries,
                entries.len()
            )));
        }
        let index = Self::from_entries(header.provider_id, entries)?;
        if index.dim != header.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: header.dim,
                actual: index.dim,
            });
        }
        Ok(index)
    }
}

/// Key of a cached index: the sorted document ids, the chunking policy and the
/// embedding provider.
pub fn index_cache_key(doc_ids: &[String], policy: &ChunkingPolicy, provider_id: &str) -> String {
    let mut ids: Vec<&str> = doc_ids.iter().map(String::as_str).collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update([0u8]);
    }
    hasher.update(
        format!(
            "{}|{}|{:?}|",
            policy.target_size, policy.overlap, policy.boundary_mode
        )
        .as_bytes(),
    );
    hasher.update(provider_id.as_bytes());
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

type Slot = Arc<Mutex<Option<Arc<VectorIndex>>>>;

/// Concurrent read-mostly cache. Concurrent requests for the same key build the
/// index once; the others block on that key until it is ready.
#[derive(Default)]
pub struct IndexCache {
    slots: Mutex<HashMap<String, Slot>>,
    builds: AtomicUsize,
}

impl IndexCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build<F>(&self, key: &str, build: F) -> Result<Arc<VectorIndex>, EmbedError>
    where
        F: FnOnce() -> Result<VectorIndex, EmbedError>,
    {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            slots.entry(key.to_string()).or_default().clone()
        };
        let mut guard = slot.lock().unwrap();
        if let Some(index) = guard.as_ref() {
            return Ok(index.clone());
        }
        // A failed build leaves the slot empty so a later call can retry.
        let index = Arc::new(build()?);
        self.builds.fetch_add(1, AtomicOrdering::SeqCst);
        *guard = Some(index.clone());
        Ok(index)
    }

    pub fn get(&self, key: &str) -> Option<Arc<VectorIndex>> {
        let slot = self.slots.lock().unwrap().get(key).cloned()?;
        let guard = slot.lock().unwrap();
        guard.clone()
    }

    /// Number of indexes actually built.
    pub fn builds(&self) -> usize {
        self.builds.load(AtomicOrdering::SeqCst)
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 1..32),
            s in 0.001f64..1000.0,
            seed in any::<u64>(),
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3));
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + ((seed >> (i % 60)) & 7) as f64 - 3.5).collect();
            prop_assume!(b.iter().any(|x| x.abs() > 1e-3));
            let (va, vb) = (EmbeddingVector::new(a).unwrap(), EmbeddingVector::new(b).unwrap());
            let c1 = cosine(&va, &vb).unwrap();
            let c2 = cosine(&va.scaled(s), &vb).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&c1));
        }
    }
}
