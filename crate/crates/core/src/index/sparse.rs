//! Inverted-index BM25 retrieval.
//!
//! Scoring follows the usual formulation
//!
//! ```text
//! score(d, q) = Σ_t idf(t) · tf · (k1 + 1) / (tf + k1 · (1 − b + b · dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! summed over the query's term occurrences. The `+1` inside the log keeps
//! every idf positive, so any chunk containing a query term scores above
//! zero. Ties are broken by ascending chunk id.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::corpus::{Chunk, ChunkId};

use super::{IndexError, MetadataFilter, RankedList, Stage};

/// Lowercased alphanumeric terms. Used for both indexing and queries.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct SparseIndex {
    k1: f64,
    b: f64,
    avgdl: f64,
    /// term -> (chunk ordinal, term frequency), ordinals ascending.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    ids: Vec<ChunkId>,
    metadata: Vec<BTreeMap<String, String>>,
}

impl SparseIndex {
    pub fn build(chunks: &[Chunk], k1: f64, b: f64) -> Result<Self, IndexError> {
        if chunks.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        if k1 <= 0.0 {
            return Err(IndexError::BadParams(format!("k1 must be positive, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(IndexError::BadParams(format!("b must lie in [0, 1], got {b}")));
        }

        let mut seen = BTreeSet::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(chunks.len());
        let mut ids = Vec::with_capacity(chunks.len());
        let mut metadata = Vec::with_capacity(chunks.len());

        for (ordinal, chunk) in chunks.iter().enumerate() {
            if !seen.insert(chunk.id.clone()) {
                return Err(IndexError::DuplicateChunk(chunk.id.clone()));
            }
            let terms = tokenize(&chunk.text);
            doc_lengths.push(terms.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for term in terms {
                *counts.entry(term).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push((ordinal as u32, tf));
            }
            ids.push(chunk.id.clone());
            metadata.push(chunk.metadata.clone());
        }

        let avgdl = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / chunks.len() as f64;
        Ok(Self {
            k1,
            b,
            avgdl,
            postings,
            doc_lengths,
            ids,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    /// Number of indexed chunks containing `term`.
    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &ChunkId> {
        self.ids.iter()
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Ids admitted by `filter`, or `None` when the filter is empty and
    /// everything passes.
    pub fn allowed_ids(&self, filter: &MetadataFilter) -> Option<BTreeSet<ChunkId>> {
        if filter.is_empty() {
            return None;
        }
        Some(
            self.ids
                .iter()
                .zip(&self.metadata)
                .filter(|(_, meta)| filter.matches(meta))
                .map(|(id, _)| id.clone())
                .collect(),
        )
    }

    pub fn search(&self, query: &str, depth: usize) -> RankedList {
        self.search_filtered(query, depth, None)
    }

    /// Top-`depth` chunks by BM25 score among `allowed` (everything when
    /// `None`). A query with no indexed terms yields an empty list.
    pub fn search_filtered(
        &self,
        query: &str,
        depth: usize,
        allowed: Option<&BTreeSet<ChunkId>>,
    ) -> RankedList {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in tokenize(query) {
            let Some(posting) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(posting.len());
            for &(ordinal, tf) in posting {
                if let Some(allowed) = allowed {
                    if !allowed.contains(&self.ids[ordinal as usize]) {
                        continue;
                    }
                }
                let tf = tf as f64;
                let dl = self.doc_lengths[ordinal as usize] as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl);
                *scores.entry(ordinal).or_insert(0.0) += idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        let scored: Vec<(ChunkId, f64)> = scores
            .into_iter()
            .map(|(ordinal, score)| (self.ids[ordinal as usize].clone(), score))
            .collect();
        RankedList::from_scores(query, Stage::Sparse, scored)
            .expect("accumulated scores are keyed by unique ordinal")
            .truncated(depth)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::chunk;
    use super::*;

    fn two_doc_index() -> SparseIndex {
        let chunks = vec![
            chunk("d1", 0, "apple banana"),
            chunk("d2", 0, "apple apple cherry"),
        ];
        SparseIndex::build(&chunks, 1.2, 0.75).unwrap()
    }

    #[test]
    fn build_statistics_match_hand_counts() {
        let index = two_doc_index();
        assert_eq!(index.len(), 2);
        assert!((index.avgdl() - 2.5).abs() < 1e-12);
        assert_eq!(index.doc_frequency("apple"), 2);
        assert_eq!(index.doc_frequency("cherry"), 1);
        assert_eq!(index.doc_frequency("zzz"), 0);
    }

    #[test]
    fn single_chunk_avgdl_is_its_length() {
        let index = SparseIndex::build(&[chunk("d1", 0, "one two three")], 1.2, 0.75).unwrap();
        assert!((index.avgdl() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn build_rejects_duplicate_ids_and_empty_input() {
        let dup = vec![chunk("d1", 0, "a"), chunk("d1", 0, "b")];
        assert!(matches!(
            SparseIndex::build(&dup, 1.2, 0.75),
            Err(IndexError::DuplicateChunk(_))
        ));
        assert!(matches!(
            SparseIndex::build(&[], 1.2, 0.75),
            Err(IndexError::EmptyCorpus)
        ));
    }

    #[test]
    fn build_rejects_bad_parameters() {
        let chunks = vec![chunk("d1", 0, "a")];
        assert!(SparseIndex::build(&chunks, 0.0, 0.75).is_err());
        assert!(SparseIndex::build(&chunks, 1.2, 1.5).is_err());
    }

    #[test]
    fn cherry_query_scores_match_hand_evaluation() {
        // idf(cherry) = ln(1 + 1.5/1.5) = ln 2; tf=1, dl=3, avgdl=2.5:
        // ln 2 · 2.2 / (1 + 1.2·(0.25 + 0.9)) = ln 2 · 2.2/2.38 ≈ 0.6407
        let index = two_doc_index();
        let out = index.search("cherry", 10);
        assert_eq!(out.len(), 1);
        assert_eq!(out.entries()[0].id.source_kb(), "d2");
        let expected = 2.0_f64.ln() * 2.2 / 2.38;
        assert!((out.entries()[0].score - expected).abs() < 1e-12);
        assert!((out.entries()[0].score - 0.6407).abs() < 1e-4);
    }

    #[test]
    fn unseen_term_yields_empty_list() {
        let index = two_doc_index();
        assert!(index.search("zzz", 10).is_empty());
    }

    #[test]
    fn full_text_query_ranks_its_document_first() {
        let chunks = vec![
            chunk("d1", 0, "rotate old api keys monthly"),
            chunk("d2", 0, "archive old invoices yearly"),
            chunk("d3", 0, "export archive metrics dashboard"),
        ];
        let index = SparseIndex::build(&chunks, 1.2, 0.75).unwrap();
        // d2's own text must score d2 strictly highest; d1 and d3 each
        // share one term with the query, so they trail but still match.
        let out = index.search("archive old invoices yearly", 3);
        assert_eq!(out.len(), 3);
        assert_eq!(out.entries()[0].id.source_kb(), "d2");
        assert!(out.entries()[0].score > out.entries()[1].score);
    }

    #[test]
    fn rebuild_is_deterministic() {
        let chunks = vec![
            chunk("d1", 0, "apple banana"),
            chunk("d2", 0, "apple apple cherry"),
        ];
        let a = SparseIndex::build(&chunks, 1.2, 0.75).unwrap();
        let b = SparseIndex::build(&chunks, 1.2, 0.75).unwrap();
        assert_eq!(
            a.search("apple cherry", 10).entries(),
            b.search("apple cherry", 10).entries()
        );
    }

    #[test]
    fn filtered_search_excludes_disallowed_chunks() {
        let index = two_doc_index();
        let allowed: BTreeSet<ChunkId> = [ChunkId::new("d1", 0).unwrap()].into();
        let out = index.search_filtered("apple", 10, Some(&allowed));
        assert_eq!(out.len(), 1);
        assert_eq!(out.entries()[0].id.source_kb(), "d1");
    }
}
