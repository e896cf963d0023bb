//! Sparse (BM25) and dense vector indexes over chunks, metadata
//! pre-filtering, and hybrid top-K retrieval.
//!
//! Both indexes are immutable after construction and safe to search
//! concurrently. Every search result is a [`RankedList`]: entries sorted by
//! descending score with ties broken by ascending chunk id, so identical
//! inputs always produce identical output.

mod dense;
mod embed;
mod sparse;

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Chunk, ChunkId};
use crate::service::TransportError;

pub use dense::DenseIndex;
pub use embed::{load_embeddings, Embedder, HashedNgramEmbedder, HttpEmbedder};
pub use sparse::{tokenize, SparseIndex};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty chunk list")]
    EmptyCorpus,
    #[error("invalid index parameter: {0}")]
    BadParams(String),
    #[error("duplicate chunk id {0}")]
    DuplicateChunk(ChunkId),
    #[error("vector dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("sparse and dense indexes cover different chunk sets")]
    CoverageMismatch,
    #[error("ranked list violates ordering or uniqueness: {0}")]
    MalformedList(String),
    #[error("{path}: {detail}")]
    BadEmbeddingFile { path: String, detail: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl IndexError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transport(t) if t.is_transient())
    }
}

/// Which pipeline stage produced a ranked list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sparse,
    Dense,
    Hybrid,
    Rerank,
    Rrf,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sparse => "sparse",
            Self::Dense => "dense",
            Self::Hybrid => "hybrid",
            Self::Rerank => "rerank",
            Self::Rrf => "rrf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub id: ChunkId,
    pub score: f64,
}

/// An ordered retrieval result: unique chunk ids with non-increasing
/// scores, labelled with the query text and producing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    query: String,
    stage: Stage,
    entries: Vec<ScoredChunk>,
}

impl RankedList {
    /// Wrap pre-sorted entries, verifying the ordering and uniqueness
    /// invariants hold.
    pub fn new(
        query: impl Into<String>,
        stage: Stage,
        entries: Vec<ScoredChunk>,
    ) -> Result<Self, IndexError> {
        for pair in entries.windows(2) {
            if pair[0].score < pair[1].score {
                return Err(IndexError::MalformedList(format!(
                    "score increases from {} to {}",
                    pair[0].score, pair[1].score
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for entry in &entries {
            if !seen.insert(&entry.id) {
                return Err(IndexError::MalformedList(format!(
                    "duplicate chunk id {}",
                    entry.id
                )));
            }
        }
        Ok(Self {
            query: query.into(),
            stage,
            entries,
        })
    }

    pub fn empty(query: impl Into<String>, stage: Stage) -> Self {
        Self {
            query: query.into(),
            stage,
            entries: Vec::new(),
        }
    }

    /// Sort `(id, score)` pairs into canonical order: descending score,
    /// ties by ascending chunk id.
    pub fn from_scores(
        query: impl Into<String>,
        stage: Stage,
        mut scores: Vec<(ChunkId, f64)>,
    ) -> Result<Self, IndexError> {
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::new(
            query,
            stage,
            scores
                .into_iter()
                .map(|(id, score)| ScoredChunk { id, score })
                .collect(),
        )
    }

    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn entries(&self) -> &[ScoredChunk] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &ChunkId> {
        self.entries.iter().map(|e| &e.id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The top-`n` prefix, keeping query and stage labels.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            query: self.query.clone(),
            stage: self.stage,
            entries: self.entries.iter().take(n).cloned().collect(),
        }
    }

    pub(crate) fn relabel(mut self, query: impl Into<String>, stage: Stage) -> Self {
        self.query = query.into();
        self.stage = stage;
        self
    }
}

/// Equality constraints a chunk's metadata must satisfy to be retrievable.
/// An empty filter admits every chunk.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataFilter {
    required: BTreeMap<String, String>,
}

impl MetadataFilter {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(required: BTreeMap<String, String>) -> Self {
        Self { required }
    }

    pub fn require(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.required.insert(key.into(), value.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.required.is_empty()
    }

    pub fn matches(&self, metadata: &BTreeMap<String, String>) -> bool {
        self.required
            .iter()
            .all(|(key, value)| metadata.get(key) == Some(value))
    }
}

/// Chunks whose metadata satisfies the filter; applied before any scoring
/// so excluded chunks cannot appear in any retrieval output.
pub fn apply_filter<'a>(chunks: &'a [Chunk], filter: &MetadataFilter) -> Vec<&'a Chunk> {
    chunks.iter().filter(|c| filter.matches(&c.metadata)).collect()
}

/// Retrieval interface consumed by the method pipeline. Implementations
/// must be deterministic for a fixed (query, depth, filter) triple.
pub trait Retriever: Send + Sync {
    fn retrieve(
        &self,
        query: &str,
        depth: usize,
        filter: &MetadataFilter,
    ) -> Result<RankedList, IndexError>;
}

/// Hybrid retrieval: BM25 and exact cosine search over the same chunks,
/// merged by reciprocal-rank combination with constant `fusion_constant`.
///
/// Rank-level merging sidesteps the incommensurable score scales of the
/// two retrievers; the same fusion routine used for two-query fusion is
/// reused here.
pub struct HybridRetriever {
    sparse: SparseIndex,
    dense: DenseIndex,
    embedder: Arc<dyn Embedder>,
    fusion_constant: f64,
}

impl HybridRetriever {
    pub fn new(
        sparse: SparseIndex,
        dense: DenseIndex,
        embedder: Arc<dyn Embedder>,
        fusion_constant: f64,
    ) -> Result<Self, IndexError> {
        if fusion_constant <= 0.0 {
            return Err(IndexError::BadParams(format!(
                "fusion constant must be positive, got {fusion_constant}"
            )));
        }
        let sparse_ids: BTreeSet<&ChunkId> = sparse.chunk_ids().collect();
        let dense_ids: BTreeSet<&ChunkId> = dense.chunk_ids().collect();
        if sparse_ids != dense_ids {
            return Err(IndexError::CoverageMismatch);
        }
        Ok(Self {
            sparse,
            dense,
            embedder,
            fusion_constant,
        })
    }

    /// Build both indexes from the same chunk list.
    pub fn build(
        chunks: &[Chunk],
        embedder: Arc<dyn Embedder>,
        k1: f64,
        b: f64,
        fusion_constant: f64,
    ) -> Result<Self, IndexError> {
        let sparse = SparseIndex::build(chunks, k1, b)?;
        let dense = DenseIndex::build(chunks, embedder.as_ref())?;
        Self::new(sparse, dense, embedder, fusion_constant)
    }

    pub fn sparse(&self) -> &SparseIndex {
        &self.sparse
    }

    pub fn dense(&self) -> &DenseIndex {
        &self.dense
    }
}

impl Retriever for HybridRetriever {
    fn retrieve(
        &self,
        query: &str,
        depth: usize,
        filter: &MetadataFilter,
    ) -> Result<RankedList, IndexError> {
        let allowed = self.sparse.allowed_ids(filter);
        let sparse_list = self.sparse.search_filtered(query, depth, allowed.as_ref());
        let query_vector = self.embedder.embed(query)?;
        let dense_list =
            self.dense
                .search_filtered(query, &query_vector, depth, allowed.as_ref())?;
        let fused = crate::rank::rrf_fuse(&[sparse_list, dense_list], self.fusion_constant)
            .expect("two input lists are always provided");
        Ok(fused.truncated(depth).relabel(query, Stage::Hybrid))
    }
}
