//! The ranking stack: per-query reranking, chunk-level reciprocal rank
//! fusion of the two reranked lists, optional post-fusion reranking
//! anchored on either query, and fixed-budget dedup/truncation.
//!
//! Five methods are produced per query:
//!
//! * `baseline` — rerank of the original query's retrieval
//! * `q2_baseline` — rerank of the reformulation's retrieval
//! * `rrf_q1_q2` — reciprocal rank fusion of the two reranked lists
//! * `rerank_on_rrf_q1` — fused list reranked with the original query
//! * `rerank_on_rrf_q2` — fused list reranked with the reformulation
//!
//! Fusion always consumes reranked lists, never raw retrieval; the runner
//! asserts this through stage labels. Chunk identities are carried through
//! every stage, so distinct chunks of one article are never merged.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkId, QueryRecord};
use crate::index::{
    tokenize, IndexError, MetadataFilter, RankedList, Retriever, ScoredChunk, Stage,
};
use crate::service::{response_field, Endpoint, HttpClient, TransportError, UreqClient};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("fusion requires at least one input list")]
    NoInputLists,
    #[error("fusion constant must be positive, got {0}")]
    BadFusionConstant(f64),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("list has {len} entries but at most {limit} fit the positional convention")]
    ListTooLong { len: usize, limit: usize },
    #[error("no stored text for chunk {0}")]
    MissingText(ChunkId),
    #[error("reranker returned {got} scores for {expected} passages")]
    ScoreCountMismatch { expected: usize, got: usize },
    #[error("fusion input must be a reranked list, got stage {0:?}")]
    FusionInputNotReranked(Stage),
    #[error(transparent)]
    Retrieval(#[from] IndexError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl RankError {
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Retrieval(e) => e.is_transient(),
            Self::Transport(t) => t.is_transient(),
            _ => false,
        }
    }
}

/// The five per-query method outputs, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Baseline,
    Q2Baseline,
    RrfQ1Q2,
    RerankOnRrfQ1,
    RerankOnRrfQ2,
}

impl MethodName {
    pub const ALL: [MethodName; 5] = [
        MethodName::Baseline,
        MethodName::Q2Baseline,
        MethodName::RrfQ1Q2,
        MethodName::RerankOnRrfQ1,
        MethodName::RerankOnRrfQ2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Q2Baseline => "q2_baseline",
            Self::RrfQ1Q2 => "rrf_q1_q2",
            Self::RerankOnRrfQ1 => "rerank_on_rrf_q1",
            Self::RerankOnRrfQ2 => "rerank_on_rrf_q2",
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Fusion and truncation knobs shared by every method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Smoothing constant in the 1/(k + rank) contribution.
    pub rrf_k: f64,
    /// Final context depth; every method's output is cut to this length.
    pub k: usize,
    /// How many fused candidates the post-fusion rerank may score.
    pub rerank_budget: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            rrf_k: 60.0,
            k: 10,
            rerank_budget: 10,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        if self.rrf_k <= 0.0 {
            return Err(RankError::BadFusionConstant(self.rrf_k));
        }
        if self.k == 0 || self.rerank_budget == 0 {
            return Err(RankError::ZeroBudget);
        }
        Ok(())
    }
}

/// Concatenate two per-query result lists under the fixed positional
/// convention: slots `0..k` hold the first list, `k..2k` the second,
/// missing positions left empty. No dedup happens here — the layout only
/// records what each query retrieved.
pub fn concat_positional(
    q1_list: &RankedList,
    q2_list: &RankedList,
    k: usize,
) -> Result<Vec<Option<ChunkId>>, RankError> {
    for list in [q1_list, q2_list] {
        if list.len() > k {
            return Err(RankError::ListTooLong {
                len: list.len(),
                limit: k,
            });
        }
    }
    let mut slots = vec![None; 2 * k];
    for (i, entry) in q1_list.entries().iter().enumerate() {
        slots[i] = Some(entry.id.clone());
    }
    for (i, entry) in q2_list.entries().iter().enumerate() {
        slots[k + i] = Some(entry.id.clone());
    }
    Ok(slots)
}

/// Chunk-level reciprocal rank fusion. A chunk at 1-based rank `r` in a
/// list contributes `1/(k + r)`; contributions are summed across lists
/// (best rank per list if a list were ever to repeat a chunk). The output
/// is sorted by descending fused score, ties by ascending chunk id, and
/// inherits the first input's query label.
pub fn rrf_fuse(lists: &[RankedList], k: f64) -> Result<RankedList, RankError> {
    if lists.is_empty() {
        return Err(RankError::NoInputLists);
    }
    if k <= 0.0 {
        return Err(RankError::BadFusionConstant(k));
    }
    let mut scores: HashMap<&ChunkId, f64> = HashMap::new();
    for list in lists {
        let mut best_rank: HashMap<&ChunkId, usize> = HashMap::new();
        for (i, entry) in list.entries().iter().enumerate() {
            let rank = i + 1;
            best_rank
                .entry(&entry.id)
                .and_modify(|r| *r = (*r).min(rank))
                .or_insert(rank);
        }
        for (id, rank) in best_rank {
            *scores.entry(id).or_insert(0.0) += 1.0 / (k + rank as f64);
        }
    }
    let scored: Vec<(ChunkId, f64)> = scores
        .into_iter()
        .map(|(id, score)| (id.clone(), score))
        .collect();
    Ok(RankedList::from_scores(lists[0].query(), Stage::Rrf, scored)
        .expect("fused scores are keyed by unique chunk id"))
}

/// Keep the first occurrence of each chunk id, drop later exact
/// duplicates, and cut to length `k`. Relative order of survivors is
/// unchanged; distinct chunks of the same article both survive.
pub fn dedup_truncate_entries(entries: &[ScoredChunk], k: usize) -> Vec<ScoredChunk> {
    let mut seen = std::collections::BTreeSet::new();
    entries
        .iter()
        .filter(|e| seen.insert(&e.id))
        .take(k)
        .cloned()
        .collect()
}

/// [`dedup_truncate_entries`] applied to a ranked list, keeping its labels.
pub fn dedup_truncate(list: &RankedList, k: usize) -> RankedList {
    RankedList::new(
        list.query(),
        list.stage(),
        dedup_truncate_entries(list.entries(), k),
    )
    .expect("a prefix of a valid list is valid")
}

/// Chunk text lookup for rerankers.
pub trait TextProvider: Sync {
    fn text_of(&self, id: &ChunkId) -> Option<&str>;
}

impl TextProvider for HashMap<ChunkId, String> {
    fn text_of(&self, id: &ChunkId) -> Option<&str> {
        self.get(id).map(String::as_str)
    }
}

impl TextProvider for BTreeMap<ChunkId, String> {
    fn text_of(&self, id: &ChunkId) -> Option<&str> {
        self.get(id).map(String::as_str)
    }
}

/// Relevance scorer for (query, passage) pairs. Returns one score per
/// passage, aligned by index. Implementations must be deterministic and
/// safe for concurrent use.
pub trait Reranker: Send + Sync {
    fn descriptor(&self) -> String;

    fn score(&self, query: &str, passages: &[(&ChunkId, &str)]) -> Result<Vec<f64>, RankError>;
}

/// Reorder the top-`budget` candidates by relevance to `query`. The
/// output is a permutation of that prefix — chunk ids pass through
/// untouched — sorted by reranker score, ties by ascending chunk id.
pub fn rerank(
    query: &str,
    candidates: &RankedList,
    budget: usize,
    reranker: &dyn Reranker,
    texts: &dyn TextProvider,
) -> Result<RankedList, RankError> {
    if budget == 0 {
        return Err(RankError::ZeroBudget);
    }
    if candidates.is_empty() {
        return Ok(RankedList::empty(query, Stage::Rerank));
    }
    let top: Vec<&ScoredChunk> = candidates.entries().iter().take(budget).collect();
    let passages: Vec<(&ChunkId, &str)> = top
        .iter()
        .map(|e| {
            texts
                .text_of(&e.id)
                .map(|t| (&e.id, t))
                .ok_or_else(|| RankError::MissingText(e.id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let scores = reranker.score(query, &passages)?;
    if scores.len() != passages.len() {
        return Err(RankError::ScoreCountMismatch {
            expected: passages.len(),
            got: scores.len(),
        });
    }
    let scored = passages
        .iter()
        .zip(scores)
        .map(|((id, _), score)| ((*id).clone(), score))
        .collect();
    Ok(RankedList::from_scores(query, Stage::Rerank, scored)
        .expect("candidate prefix has unique ids"))
}

/// Deterministic lexical reranker: BM25 relevance of each passage against
/// the anchor query, with collection statistics taken from the candidate
/// set itself. Runs without model weights; a cross-encoder service can be
/// swapped in behind the same interface.
#[derive(Debug, Clone)]
pub struct LexicalReranker {
    k1: f64,
    b: f64,
}

impl Default for LexicalReranker {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl LexicalReranker {
    pub fn new(k1: f64, b: f64) -> Self {
        Self { k1, b }
    }
}

impl Reranker for LexicalReranker {
    fn descriptor(&self) -> String {
        format!("lexical-bm25/k1={}/b={}", self.k1, self.b)
    }

    fn score(&self, query: &str, passages: &[(&ChunkId, &str)]) -> Result<Vec<f64>, RankError> {
        let docs: Vec<Vec<String>> = passages.iter().map(|(_, text)| tokenize(text)).collect();
        let n = docs.len() as f64;
        let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in &docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        let query_terms = tokenize(query);
        let scores = docs
            .iter()
            .map(|doc| {
                if avgdl == 0.0 {
                    return 0.0;
                }
                let dl = doc.len() as f64;
                query_terms
                    .iter()
                    .map(|term| {
                        let tf = doc.iter().filter(|t| *t == term).count() as f64;
                        if tf == 0.0 {
                            return 0.0;
                        }
                        let dfi = df.get(term.as_str()).copied().unwrap_or(0) as f64;
                        let idf = (1.0 + (n - dfi + 0.5) / (dfi + 0.5)).ln();
                        idf * tf * (self.k1 + 1.0)
                            / (tf + self.k1 * (1.0 - self.b + self.b * dl / avgdl))
                    })
                    .sum()
            })
            .collect();
        Ok(scores)
    }
}

/// Client for a rerank service speaking
/// `{"query": ..., "passages": [{"id", "text"}, ...]} -> {"scores": [...]}`.
pub struct HttpReranker {
    client: Box<dyn HttpClient>,
    url: String,
}

impl HttpReranker {
    pub fn new(endpoint: Endpoint) -> Self {
        let url = endpoint.url.clone();
        Self {
            client: Box::new(UreqClient::new(endpoint)),
            url,
        }
    }

    pub fn with_client(client: Box<dyn HttpClient>, url: impl Into<String>) -> Self {
        Self {
            client,
            url: url.into(),
        }
    }
}

impl Reranker for HttpReranker {
    fn descriptor(&self) -> String {
        format!("service/{}", self.url)
    }

    fn score(&self, query: &str, passages: &[(&ChunkId, &str)]) -> Result<Vec<f64>, RankError> {
        let body = serde_json::json!({
            "query": query,
            "passages": passages
                .iter()
                .map(|(id, text)| serde_json::json!({ "id": id.as_str(), "text": text }))
                .collect::<Vec<_>>(),
        });
        let response = self.client.post_json(&self.url, &body)?;
        let raw = response_field(&self.url, &response, "scores")?;
        let scores: Vec<f64> =
            serde_json::from_value(raw.clone()).map_err(|e| TransportError::Malformed {
                url: self.url.clone(),
                detail: e.to_string(),
            })?;
        Ok(scores)
    }
}

/// Wall-clock cost of each pipeline stage for one query, measured with a
/// monotonic clock.
#[derive(Debug, Clone)]
pub struct StageTimings {
    pub retrieval_q1: Duration,
    pub retrieval_q2: Duration,
    pub rrf: Duration,
    /// One entry per rerank invocation (two per-query passes, two
    /// post-fusion passes).
    pub rerank_passes: Vec<Duration>,
}

/// The five final lists for one query plus what the runner observed on
/// the way: raw retrievals (for positional logging), the stage labels the
/// fusion inputs carried, and stage timings.
#[derive(Debug, Clone)]
pub struct MethodResults {
    finals: BTreeMap<MethodName, RankedList>,
    pub q1_retrieved: RankedList,
    pub q2_retrieved: RankedList,
    pub fusion_input_stages: Vec<Stage>,
    pub timings: StageTimings,
}

impl MethodResults {
    pub fn get(&self, method: MethodName) -> &RankedList {
        &self.finals[&method]
    }

    pub fn iter(&self) -> impl Iterator<Item = (MethodName, &RankedList)> {
        MethodName::ALL.into_iter().map(|m| (m, &self.finals[&m]))
    }

    /// Raw Q1/Q2 retrievals laid out under the 2K positional convention.
    pub fn retrieval_slots(&self, k: usize) -> Result<Vec<Option<ChunkId>>, RankError> {
        concat_positional(&self.q1_retrieved, &self.q2_retrieved, k)
    }
}

/// Run all five methods for one query. Retrieval and reranking are
/// delegated to the given implementations; every final list is
/// dedup-truncated to `cfg.k`.
pub fn run_methods(
    query: &QueryRecord,
    q2: &str,
    retriever: &dyn Retriever,
    reranker: &dyn Reranker,
    texts: &dyn TextProvider,
    filter: &MetadataFilter,
    cfg: &FusionConfig,
) -> Result<MethodResults, RankError> {
    cfg.validate()?;
    let q1 = query.question.as_str();

    let started = Instant::now();
    let q1_retrieved = retriever.retrieve(q1, cfg.k, filter)?;
    let retrieval_q1 = started.elapsed();

    let started = Instant::now();
    let q2_retrieved = retriever.retrieve(q2, cfg.k, filter)?;
    let retrieval_q2 = started.elapsed();

    let mut rerank_passes = Vec::with_capacity(4);
    let mut timed_rerank = |anchor: &str, candidates: &RankedList, budget: usize| {
        let started = Instant::now();
        let out = rerank(anchor, candidates, budget, reranker, texts);
        rerank_passes.push(started.elapsed());
        out
    };

    let baseline_pre = timed_rerank(q1, &q1_retrieved, cfg.k)?;
    let q2_baseline_pre = timed_rerank(q2, &q2_retrieved, cfg.k)?;

    // Fusion consumes the reranked lists, never raw retrieval.
    for list in [&baseline_pre, &q2_baseline_pre] {
        if list.stage() != Stage::Rerank {
            return Err(RankError::FusionInputNotReranked(list.stage()));
        }
    }
    let fusion_input_stages = vec![baseline_pre.stage(), q2_baseline_pre.stage()];

    let started = Instant::now();
    let fused = rrf_fuse(
        &[baseline_pre.clone(), q2_baseline_pre.clone()],
        cfg.rrf_k,
    )?;
    let rrf = started.elapsed();

    let fused_top = fused.truncated(cfg.rerank_budget);
    let rerank_q1_pre = timed_rerank(q1, &fused_top, cfg.rerank_budget)?;
    let rerank_q2_pre = timed_rerank(q2, &fused_top, cfg.rerank_budget)?;

    let finals = BTreeMap::from([
        (MethodName::Baseline, dedup_truncate(&baseline_pre, cfg.k)),
        (MethodName::Q2Baseline, dedup_truncate(&q2_baseline_pre, cfg.k)),
        (MethodName::RrfQ1Q2, dedup_truncate(&fused, cfg.k)),
        (MethodName::RerankOnRrfQ1, dedup_truncate(&rerank_q1_pre, cfg.k)),
        (MethodName::RerankOnRrfQ2, dedup_truncate(&rerank_q2_pre, cfg.k)),
    ]);

    Ok(MethodResults {
        finals,
        q1_retrieved,
        q2_retrieved,
        fusion_input_stages,
        timings: StageTimings {
            retrieval_q1,
            retrieval_q2,
            rrf,
            rerank_passes,
        },
    })
}
