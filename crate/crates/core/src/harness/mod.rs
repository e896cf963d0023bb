//! End-to-end orchestration: configuration, retries, per-query method
//! execution, evaluation, statistics, and report emission.
//!
//! A run is ingest → index → rewrite → retrieve → rank → evaluate →
//! aggregate → report. Failures of external calls are retried per the
//! configured budget; a query that still fails is skipped, logged, and
//! excluded from every table's denominator so all comparisons stay
//! paired over the identical query set.

mod config;
mod latency;
mod report;
mod retry;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, Chunk, ChunkId, CorpusError, QueryRecord};
use crate::eval::{self, EvalError, HitRecord, SummaryMetrics};
use crate::index::{DenseIndex, HybridRetriever, IndexError, SparseIndex};
use crate::rank::{self, MethodName, RankError};
use crate::rewrite::{generate_q2, PromptType, RewriteCache};
use crate::stats::{self, OverlapEntry, OverlapStats, SignificanceRow, StatsError};

pub use config::{
    EmbedderConfig, LlmConfig, RerankerConfig, RunConfig, SignificanceConfig, ENV_AUTH_TOKEN,
    ENV_EMBED_ENDPOINT, ENV_LLM_ENDPOINT, ENV_RERANK_ENDPOINT,
};
pub use latency::{LatencyStage, LatencySummary, QueryLatency, StageSummary};
pub use report::emit_report;
pub use retry::{with_retries, RetryFailure, RetryPolicy, Retryable, RetryingReranker, RetryingRetriever};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact: {0}")]
    Artifact(String),
}

/// Pipeline stage at which a query was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipStage {
    Rewrite,
    Retrieval,
    Rerank,
}

impl SkipStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rewrite => "rewrite",
            Self::Retrieval => "retrieval",
            Self::Rerank => "rerank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub query_index: usize,
    pub question: String,
    pub stage: SkipStage,
    pub attempts: u32,
    pub cause: String,
}

/// Everything recorded for one evaluated query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_index: usize,
    pub question: String,
    pub q2: String,
    /// Final (dedup-truncated) chunk sequence per method.
    pub methods: BTreeMap<MethodName, Vec<ChunkId>>,
    /// Raw Q1/Q2 retrievals in the fixed 2K positional layout.
    pub retrieval_slots: Vec<Option<ChunkId>>,
    pub fusion_input_stages: Vec<crate::index::Stage>,
    pub hits: Vec<HitRecord>,
    pub overlap: OverlapEntry,
    pub latency: QueryLatency,
}

/// One line of `artifact.jsonl`: every query ends up as exactly one of
/// these, in dataset order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QueryLogRecord {
    Result(Box<QueryOutcome>),
    Skip(SkipEntry),
}

/// A complete run: per-query records plus every aggregate table, and the
/// resolved config snapshot sufficient to reproduce the run in replay
/// mode.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub config_snapshot: String,
    pub prompt_type: PromptType,
    pub k: usize,
    pub significance_depth: usize,
    pub records: Vec<QueryLogRecord>,
    pub summary: SummaryMetrics,
    pub significance: Vec<SignificanceRow>,
    pub overlap: OverlapStats,
    pub latency: LatencySummary,
}

impl RunArtifact {
    pub fn outcomes(&self) -> impl Iterator<Item = &QueryOutcome> {
        self.records.iter().filter_map(|r| match r {
            QueryLogRecord::Result(outcome) => Some(outcome.as_ref()),
            QueryLogRecord::Skip(_) => None,
        })
    }

    pub fn skips(&self) -> impl Iterator<Item = &SkipEntry> {
        self.records.iter().filter_map(|r| match r {
            QueryLogRecord::Result(_) => None,
            QueryLogRecord::Skip(skip) => Some(skip),
        })
    }

    /// Evaluated (non-skipped) query count — the denominator of every table.
    pub fn n(&self) -> usize {
        self.outcomes().count()
    }
}

/// Load corpus and queries and cut the articles into chunks.
pub fn ingest(cfg: &RunConfig) -> Result<(Vec<corpus::KbArticle>, Vec<QueryRecord>, Vec<Chunk>), HarnessError> {
    let articles = corpus::load_corpus(&cfg.corpus_path)?;
    let queries = corpus::load_queries(&cfg.query_path)?;
    let mut chunks = Vec::new();
    for article in &articles {
        chunks.extend(corpus::chunk_article(article, cfg.chunk_size, cfg.chunk_overlap)?);
    }
    if chunks.is_empty() {
        return Err(HarnessError::Config(
            "corpus produced no chunks; nothing to index".to_string(),
        ));
    }
    Ok((articles, queries, chunks))
}

/// Build the hybrid retriever described by the config.
pub fn build_retriever(cfg: &RunConfig, chunks: &[Chunk]) -> Result<HybridRetriever, HarnessError> {
    let embedder = cfg.build_embedder()?;
    let sparse = SparseIndex::build(chunks, cfg.bm25_k1, cfg.bm25_b)?;
    let dense = match &cfg.embeddings_path {
        Some(path) => DenseIndex::from_vectors(
            crate::index::load_embeddings(path)?,
            format!("precomputed:{}", path.display()),
        )?,
        None => DenseIndex::build(chunks, embedder.as_ref())?,
    };
    Ok(HybridRetriever::new(sparse, dense, embedder, cfg.hybrid_k)?)
}

/// Execute the full pipeline for every query. Tables are computed over
/// the non-skipped set; the artifact is returned for emission via
/// [`emit_report`].
pub fn run_experiment(cfg: &RunConfig) -> Result<RunArtifact, HarnessError> {
    cfg.validate()?;
    let (_articles, queries, chunks) = ingest(cfg)?;
    let chunk_texts: HashMap<ChunkId, String> = chunks
        .iter()
        .map(|c| (c.id.clone(), c.text.clone()))
        .collect();
    let retriever = build_retriever(cfg, &chunks)?;
    let reranker = cfg.build_reranker();
    let llm = cfg.build_llm_client();
    let cache = RewriteCache::from_queries(&queries);
    let policy = RetryPolicy::new(
        cfg.retry_budget,
        Duration::from_millis(cfg.retry_base_delay_ms),
    );
    let retrying_retriever = RetryingRetriever::new(&retriever, policy);
    let retrying_reranker = RetryingReranker::new(reranker.as_ref(), policy);
    let fusion = cfg.fusion_config();

    let process = |query_index: usize, query: &QueryRecord| -> QueryLogRecord {
        let filter = cfg.filter_for(&query.metadata);
        let rewrite = match with_retries(policy, || {
            generate_q2(query, cfg.prompt_type, llm.as_deref(), &cache)
        }) {
            Ok(rewrite) => rewrite,
            Err(failure) => {
                return QueryLogRecord::Skip(SkipEntry {
                    query_index,
                    question: query.question.clone(),
                    stage: SkipStage::Rewrite,
                    attempts: failure.attempts,
                    cause: failure.error.to_string(),
                })
            }
        };
        let results = match rank::run_methods(
            query,
            &rewrite.text,
            &retrying_retriever,
            &retrying_reranker,
            &chunk_texts,
            &filter,
            &fusion,
        ) {
            Ok(results) => results,
            Err(error) => {
                let stage = match &error {
                    RankError::Retrieval(_) => SkipStage::Retrieval,
                    _ => SkipStage::Rerank,
                };
                let attempts = if error.is_transient() {
                    policy.max_attempts()
                } else {
                    1
                };
                return QueryLogRecord::Skip(SkipEntry {
                    query_index,
                    question: query.question.clone(),
                    stage,
                    attempts,
                    cause: error.to_string(),
                });
            }
        };

        let hits: Vec<HitRecord> = MethodName::ALL
            .into_iter()
            .map(|method| {
                HitRecord::evaluate(
                    query_index,
                    method,
                    results.get(method),
                    &query.ground_truth,
                    cfg.k,
                )
                .expect("ground truth validated at load time")
            })
            .collect();
        let overlap = stats::overlap_diagnostics(
            results.get(MethodName::Baseline),
            results.get(MethodName::Q2Baseline),
            cfg.k,
        );
        let timings = &results.timings;
        let rerank_mean = if timings.rerank_passes.is_empty() {
            0.0
        } else {
            timings
                .rerank_passes
                .iter()
                .map(Duration::as_secs_f64)
                .sum::<f64>()
                / timings.rerank_passes.len() as f64
        };
        let latency = QueryLatency {
            q2_generation: rewrite.latency.as_secs_f64(),
            retrieval_q1: timings.retrieval_q1.as_secs_f64(),
            retrieval_combined: (timings.retrieval_q1 + timings.retrieval_q2).as_secs_f64(),
            rrf: timings.rrf.as_secs_f64(),
            rerank: rerank_mean,
        };
        let retrieval_slots = results
            .retrieval_slots(cfg.k)
            .expect("retrieval lists are depth-bounded");
        QueryLogRecord::Result(Box::new(QueryOutcome {
            query_index,
            question: query.question.clone(),
            q2: rewrite.text.clone(),
            methods: results
                .iter()
                .map(|(m, list)| (m, list.ids().cloned().collect()))
                .collect(),
            retrieval_slots,
            fusion_input_stages: results.fusion_input_stages.clone(),
            hits,
            overlap,
            latency,
        }))
    };

    let records = if cfg.workers <= 1 {
        queries
            .iter()
            .enumerate()
            .map(|(i, q)| process(i, q))
            .collect()
    } else {
        run_pooled(&queries, cfg.workers, &process)
    };

    assemble_artifact(
        cfg.snapshot(),
        cfg.prompt_type,
        cfg.k,
        &cfg.significance,
        records,
    )
}

/// Bounded worker pool over the query list. Workers pull indices from a
/// shared counter; the reduction sorts by query index, so output order
/// never depends on scheduling.
fn run_pooled(
    queries: &[QueryRecord],
    workers: usize,
    process: &(dyn Fn(usize, &QueryRecord) -> QueryLogRecord + Sync),
) -> Vec<QueryLogRecord> {
    let next = AtomicUsize::new(0);
    let collected: Mutex<Vec<(usize, QueryLogRecord)>> =
        Mutex::new(Vec::with_capacity(queries.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers.min(queries.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= queries.len() {
                    break;
                }
                let record = process(i, &queries[i]);
                collected.lock().expect("pool lock").push((i, record));
            });
        }
    });
    let mut records = collected.into_inner().expect("pool lock");
    records.sort_by_key(|(i, _)| *i);
    records.into_iter().map(|(_, r)| r).collect()
}

/// Compute every aggregate table from per-query records. Used both by
/// [`run_experiment`] and when re-reporting from a stored artifact.
pub fn assemble_artifact(
    config_snapshot: String,
    prompt_type: PromptType,
    k: usize,
    significance: &SignificanceConfig,
    records: Vec<QueryLogRecord>,
) -> Result<RunArtifact, HarnessError> {
    let outcomes: Vec<&QueryOutcome> = records
        .iter()
        .filter_map(|r| match r {
            QueryLogRecord::Result(outcome) => Some(outcome.as_ref()),
            QueryLogRecord::Skip(_) => None,
        })
        .collect();
    let n = outcomes.len();
    let hits: Vec<HitRecord> = outcomes.iter().flat_map(|o| o.hits.clone()).collect();
    let summary = eval::summarize(&hits, n)?;
    let significance_rows = if n == 0 || significance.variants.is_empty() {
        Vec::new()
    } else {
        stats::significance_table(
            &hits,
            significance.baseline,
            &significance.variants,
            significance.depth,
        )?
    };
    let overlap_entries: Vec<OverlapEntry> = outcomes.iter().map(|o| o.overlap.clone()).collect();
    let latencies: Vec<QueryLatency> = outcomes.iter().map(|o| o.latency.clone()).collect();
    Ok(RunArtifact {
        config_snapshot,
        prompt_type,
        k,
        significance_depth: significance.depth,
        records,
        summary,
        significance: significance_rows,
        overlap: OverlapStats::aggregate(&overlap_entries),
        latency: LatencySummary::aggregate(&latencies),
    })
}

/// Rebuild a [`RunArtifact`] from an emitted directory, recomputing every
/// table from the per-query records.
pub fn load_artifact(dir: &Path) -> Result<RunArtifact, HarnessError> {
    let snapshot_path = dir.join("config.snapshot");
    let snapshot = std::fs::read_to_string(&snapshot_path).map_err(|e| HarnessError::Io {
        path: snapshot_path.display().to_string(),
        source: e,
    })?;
    let cfg: RunConfig = toml::from_str(&snapshot)
        .map_err(|e| HarnessError::Artifact(format!("config.snapshot: {e}")))?;
    let records_path = dir.join("artifact.jsonl");
    let raw = std::fs::read_to_string(&records_path).map_err(|e| HarnessError::Io {
        path: records_path.display().to_string(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryLogRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Artifact(format!("artifact.jsonl line {}: {e}", idx + 1)))?;
        records.push(record);
    }
    assemble_artifact(snapshot, cfg.prompt_type, cfg.k, &cfg.significance, records)
}

/// Outcome of a standalone rewrite pass over the query dataset.
#[derive(Debug)]
pub struct RewriteRun {
    /// Queries with the generated reformulation recorded under the
    /// configured prompt type, ready to be written as a replay dataset.
    pub queries: Vec<QueryRecord>,
    pub generated: usize,
    pub cache_hits: usize,
    pub skips: Vec<SkipEntry>,
}

/// Generate (or verify, in replay mode) the reformulation for every
/// query, returning a dataset with the replay field populated.
pub fn generate_rewrites(cfg: &RunConfig) -> Result<RewriteRun, HarnessError> {
    let mut queries = corpus::load_queries(&cfg.query_path)?;
    let cache = RewriteCache::from_queries(&queries);
    let llm = cfg.build_llm_client();
    let policy = RetryPolicy::new(
        cfg.retry_budget,
        Duration::from_millis(cfg.retry_base_delay_ms),
    );
    let mut generated = 0;
    let mut cache_hits = 0;
    let mut skips = Vec::new();
    for (query_index, query) in queries.iter_mut().enumerate() {
        let had_cached = query
            .q2
            .as_ref()
            .is_some_and(|m| m.contains_key(cfg.prompt_type.as_str()));
        match with_retries(policy, || {
            generate_q2(query, cfg.prompt_type, llm.as_deref(), &cache)
        }) {
            Ok(rewrite) => {
                if had_cached {
                    cache_hits += 1;
                } else {
                    generated += 1;
                }
                query
                    .q2
                    .get_or_insert_with(BTreeMap::new)
                    .insert(cfg.prompt_type.as_str().to_string(), rewrite.text);
            }
            Err(failure) => skips.push(SkipEntry {
                query_index,
                question: query.question.clone(),
                stage: SkipStage::Rewrite,
                attempts: failure.attempts,
                cause: failure.error.to_string(),
            }),
        }
    }
    Ok(RewriteRun {
        queries,
        generated,
        cache_hits,
        skips,
    })
}

/// Write a query dataset (typically with replay fields filled in) as JSONL.
pub fn write_queries(queries: &[QueryRecord], path: &Path) -> Result<(), HarnessError> {
    let mut out = String::new();
    for query in queries {
        out.push_str(&serde_json::to_string(query).expect("query serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
