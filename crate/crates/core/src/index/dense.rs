//! Exact top-K cosine search over per-chunk embedding vectors. The scan
//! is exhaustive — no approximate structures — so results are a pure
//! function of the stored vectors and the query.

use std::collections::BTreeSet;

use crate::corpus::{Chunk, ChunkId};

use super::{Embedder, IndexError, MetadataFilter, RankedList, Stage};

#[derive(Debug, Clone)]
pub struct DenseIndex {
    dim: usize,
    embedder_descriptor: String,
    entries: Vec<(ChunkId, Vec<f32>)>,
    metadata: Vec<std::collections::BTreeMap<String, String>>,
}

impl DenseIndex {
    /// Embed every chunk with `embedder`.
    pub fn build(chunks: &[Chunk], embedder: &dyn Embedder) -> Result<Self, IndexError> {
        if chunks.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        let entries = chunks
            .iter()
            .zip(vectors)
            .map(|(c, v)| (c.id.clone(), v))
            .collect();
        let mut index = Self::from_vectors(entries, embedder.descriptor())?;
        index.metadata = chunks.iter().map(|c| c.metadata.clone()).collect();
        Ok(index)
    }

    /// Wrap precomputed vectors (e.g. loaded from an embedding file).
    /// Every vector must share one dimension and every chunk id must be
    /// unique.
    pub fn from_vectors(
        entries: Vec<(ChunkId, Vec<f32>)>,
        embedder_descriptor: String,
    ) -> Result<Self, IndexError> {
        if entries.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let dim = entries[0].1.len();
        if dim == 0 {
            return Err(IndexError::BadParams("zero-dimensional vectors".to_string()));
        }
        let mut seen = BTreeSet::new();
        for (id, vector) in &entries {
            if vector.len() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: vector.len(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(IndexError::DuplicateChunk(id.clone()));
            }
        }
        let metadata = vec![Default::default(); entries.len()];
        Ok(Self {
            dim,
            embedder_descriptor,
            entries,
            metadata,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_descriptor(&self) -> &str {
        &self.embedder_descriptor
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &ChunkId> {
        self.entries.iter().map(|(id, _)| id)
    }

    pub fn allowed_ids(&self, filter: &MetadataFilter) -> Option<BTreeSet<ChunkId>> {
        if filter.is_empty() {
            return None;
        }
        Some(
            self.entries
                .iter()
                .zip(&self.metadata)
                .filter(|(_, meta)| filter.matches(meta))
                .map(|((id, _), _)| id.clone())
                .collect(),
        )
    }

    pub fn search(
        &self,
        query_text: &str,
        query_vector: &[f32],
        depth: usize,
    ) -> Result<RankedList, IndexError> {
        self.search_filtered(query_text, query_vector, depth, None)
    }

    /// Top-`depth` chunks by exact cosine similarity among `allowed`.
    /// A depth beyond the corpus size returns the whole corpus, sorted.
    pub fn search_filtered(
        &self,
        query_text: &str,
        query_vector: &[f32],
        depth: usize,
        allowed: Option<&BTreeSet<ChunkId>>,
    ) -> Result<RankedList, IndexError> {
        if query_vector.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query_vector.len(),
            });
        }
        let scored: Vec<(ChunkId, f64)> = self
            .entries
            .iter()
            .filter(|(id, _)| allowed.is_none_or(|a| a.contains(id)))
            .map(|(id, vector)| (id.clone(), cosine(query_vector, vector)))
            .collect();
        Ok(RankedList::from_scores(query_text, Stage::Dense, scored)
            .expect("index ids are unique")
            .truncated(depth))
    }
}

/// Cosine similarity with f64 accumulation; zero-norm vectors score 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a.sqrt() * norm_b.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index_of(vectors: &[(&str, Vec<f32>)]) -> DenseIndex {
        let entries = vectors
            .iter()
            .map(|(kb, v)| (ChunkId::new(kb, 0).unwrap(), v.clone()))
            .collect();
        DenseIndex::from_vectors(entries, "test".to_string()).unwrap()
    }

    #[test]
    fn stored_vector_is_its_own_best_match() {
        let index = index_of(&[
            ("KB1", vec![1.0, 0.0, 0.0]),
            ("KB2", vec![0.0, 1.0, 0.0]),
            ("KB3", vec![0.6, 0.8, 0.0]),
        ]);
        let out = index.search("q", &[0.0, 1.0, 0.0], 3).unwrap();
        assert_eq!(out.entries()[0].id.source_kb(), "KB2");
        assert!((out.entries()[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depth_beyond_corpus_returns_everything_sorted() {
        let index = index_of(&[("KB1", vec![1.0, 0.0]), ("KB2", vec![0.5, 0.5])]);
        let out = index.search("q", &[1.0, 0.0], 10).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.entries()[0].score >= out.entries()[1].score);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let index = index_of(&[("KB1", vec![1.0, 0.0])]);
        assert!(matches!(
            index.search("q", &[1.0, 0.0, 0.0], 1),
            Err(IndexError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn from_vectors_rejects_ragged_dimensions_and_duplicates() {
        let ragged = vec![
            (ChunkId::new("KB1", 0).unwrap(), vec![1.0, 0.0]),
            (ChunkId::new("KB2", 0).unwrap(), vec![1.0]),
        ];
        assert!(DenseIndex::from_vectors(ragged, "t".into()).is_err());
        let dup = vec![
            (ChunkId::new("KB1", 0).unwrap(), vec![1.0, 0.0]),
            (ChunkId::new("KB1", 0).unwrap(), vec![0.0, 1.0]),
        ];
        assert!(DenseIndex::from_vectors(dup, "t".into()).is_err());
    }

    #[test]
    fn zero_vector_scores_zero_everywhere() {
        let index = index_of(&[("KB1", vec![0.0, 0.0]), ("KB2", vec![1.0, 0.0])]);
        let out = index.search("q", &[1.0, 0.0], 2).unwrap();
        assert_eq!(out.entries()[1].id.source_kb(), "KB1");
        assert_eq!(out.entries()[1].score, 0.0);
    }

    #[test]
    fn load_embeddings_round_trip() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"chunk_id":"KB1::chunk=0","vector":[1.0,0.0]}}"#).unwrap();
        writeln!(f, r#"{{"chunk_id":"KB2::chunk=0","vector":[0.0,1.0]}}"#).unwrap();
        let loaded = super::super::load_embeddings(f.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0.as_str(), "KB1::chunk=0");
        let index = DenseIndex::from_vectors(loaded, "precomputed".into()).unwrap();
        assert_eq!(index.dim(), 2);
    }
}
