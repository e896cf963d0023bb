//! Text embedding behind a pluggable interface: a deterministic hashed
//! n-gram projection for offline runs, and an HTTP client for a real
//! embedding service.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::service::{response_field, Endpoint, HttpClient, TransportError, UreqClient};

use super::IndexError;

pub trait Embedder: Send + Sync {
    /// Stable description of the embedding scheme, recorded alongside the
    /// index so mixed-embedder lookups can be detected.
    fn descriptor(&self) -> String;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Deterministic character n-gram embedder: each n-gram of the lowercased
/// text is hashed to a signed bucket, counts are accumulated, and the
/// vector is L2-normalized. No model weights, no randomness — the same
/// text always maps to the same unit vector.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dim: usize,
    ngram: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self { dim: 256, ngram: 3 }
    }
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize, ngram: usize) -> Result<Self, IndexError> {
        if dim == 0 || ngram == 0 {
            return Err(IndexError::BadParams(
                "embedder dim and n-gram size must be positive".to_string(),
            ));
        }
        Ok(Self { dim, ngram })
    }
}

// FNV-1a; fixed constants keep hashing stable across platforms and builds,
// unlike the std hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &byte in bytes {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for HashedNgramEmbedder {
    fn descriptor(&self) -> String {
        format!("hashed-ngram/n={}/dim={}", self.ngram, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError> {
        if text.trim().is_empty() {
            return Err(IndexError::EmptyText);
        }
        let normalized: Vec<char> = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .chars()
            .collect();
        let mut vector = vec![0.0f32; self.dim];
        let n = self.ngram.min(normalized.len());
        for window in normalized.windows(n) {
            let gram: String = window.iter().collect();
            let hash = fnv1a(gram.as_bytes());
            let bucket = (hash % self.dim as u64) as usize;
            let sign = if (hash >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            vector[bucket] += sign;
        }
        let norm = vector.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        Ok(vector)
    }
}

/// Client for an embedding service speaking
/// `{"texts": [...]} -> {"vectors": [[...], ...]}`.
pub struct HttpEmbedder {
    client: Box<dyn HttpClient>,
    url: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: Endpoint, dim: usize) -> Self {
        let url = endpoint.url.clone();
        Self {
            client: Box::new(UreqClient::new(endpoint)),
            url,
            dim,
        }
    }

    pub fn with_client(client: Box<dyn HttpClient>, url: impl Into<String>, dim: usize) -> Self {
        Self {
            client,
            url: url.into(),
            dim,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn descriptor(&self) -> String {
        format!("service/{}/dim={}", self.url, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(IndexError::EmptyText);
        }
        let body = serde_json::json!({ "texts": texts });
        let response = self.client.post_json(&self.url, &body)?;
        let raw = response_field(&self.url, &response, "vectors")?;
        let vectors: Vec<Vec<f32>> =
            serde_json::from_value(raw.clone()).map_err(|e| TransportError::Malformed {
                url: self.url.clone(),
                detail: e.to_string(),
            })?;
        if vectors.len() != texts.len() {
            return Err(TransportError::Malformed {
                url: self.url.clone(),
                detail: format!("expected {} vectors, got {}", texts.len(), vectors.len()),
            }
            .into());
        }
        for vector in &vectors {
            if vector.len() != self.dim {
                return Err(IndexError::DimensionMismatch {
                    expected: self.dim,
                    got: vector.len(),
                });
            }
        }
        Ok(vectors)
    }
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    chunk_id: crate::corpus::ChunkId,
    vector: Vec<f32>,
}

/// Load precomputed chunk embeddings: one JSON record per line with
/// fields `chunk_id` and `vector`.
pub fn load_embeddings(path: &Path) -> Result<Vec<(crate::corpus::ChunkId, Vec<f32>)>, IndexError> {
    let file = File::open(path).map_err(|e| IndexError::BadEmbeddingFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IndexError::BadEmbeddingFile {
            path: path.display().to_string(),
            detail: format!("line {}: {e}", idx + 1),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| IndexError::BadEmbeddingFile {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", idx + 1),
            })?;
        out.push((record.chunk_id, record.vector));
    }
    Ok(out)
}
