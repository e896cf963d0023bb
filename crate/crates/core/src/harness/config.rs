//! Run configuration: a TOML document mirroring every pipeline knob, with
//! service endpoints and auth overridable through the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::index::{Embedder, HashedNgramEmbedder, HttpEmbedder};
use crate::rank::{HttpReranker, LexicalReranker, MethodName, Reranker};
use crate::rewrite::{HttpLlmClient, LlmClient, PromptType};
use crate::service::Endpoint;

use super::HarnessError;

pub const ENV_LLM_ENDPOINT: &str = "FUSEBENCH_LLM_ENDPOINT";
pub const ENV_EMBED_ENDPOINT: &str = "FUSEBENCH_EMBED_ENDPOINT";
pub const ENV_RERANK_ENDPOINT: &str = "FUSEBENCH_RERANK_ENDPOINT";
pub const ENV_AUTH_TOKEN: &str = "FUSEBENCH_AUTH_TOKEN";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbedderConfig {
    HashedNgram {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_ngram")]
        ngram: usize,
    },
    Service {
        endpoint: String,
        dim: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self::HashedNgram {
            dim: default_dim(),
            ngram: default_ngram(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RerankerConfig {
    Lexical {
        #[serde(default = "default_k1")]
        k1: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    Service {
        endpoint: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

impl Default for RerankerConfig {
    fn default() -> Self {
        Self::Lexical {
            k1: default_k1(),
            b: default_b(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

/// Which comparisons the significance table runs and at what depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignificanceConfig {
    pub baseline: MethodName,
    /// Comparison family; each listed variant is tested against the
    /// baseline and the BH correction runs across exactly this family.
    pub variants: Vec<MethodName>,
    pub depth: usize,
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        Self {
            baseline: MethodName::Baseline,
            variants: vec![MethodName::RrfQ1Q2, MethodName::RerankOnRrfQ1],
            depth: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub query_path: PathBuf,
    #[serde(default = "default_prompt_type")]
    pub prompt_type: PromptType,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_rrf_k")]
    pub rrf_k: f64,
    /// Constant for the reciprocal-rank merge of the sparse and dense
    /// legs inside hybrid retrieval.
    #[serde(default = "default_rrf_k")]
    pub hybrid_k: f64,
    #[serde(default = "default_k")]
    pub rerank_budget: usize,
    #[serde(default = "default_k1")]
    pub bm25_k1: f64,
    #[serde(default = "default_b")]
    pub bm25_b: f64,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default)]
    pub chunk_overlap: usize,
    /// Metadata keys used to scope retrieval per query: each key present
    /// in a query's metadata becomes an equality constraint.
    #[serde(default)]
    pub filter_keys: Vec<String>,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_retry_delay_ms")]
    pub retry_base_delay_ms: u64,
    /// Use only cached reformulations; no rewrite-service calls are made.
    #[serde(default)]
    pub replay: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Seed for generating randomized fixtures; the pipeline itself is
    /// deterministic and never draws from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Precomputed chunk vectors (JSONL of `chunk_id` + `vector`);
    /// query embedding still uses the configured embedder.
    #[serde(default)]
    pub embeddings_path: Option<PathBuf>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub reranker: RerankerConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub significance: SignificanceConfig,
}

fn default_dim() -> usize {
    256
}
fn default_ngram() -> usize {
    3
}
fn default_timeout_secs() -> u64 {
    30
}
fn default_k1() -> f64 {
    1.2
}
fn default_b() -> f64 {
    0.75
}
fn default_prompt_type() -> PromptType {
    PromptType::P1
}
fn default_k() -> usize {
    10
}
fn default_rrf_k() -> f64 {
    60.0
}
fn default_chunk_size() -> usize {
    512
}
fn default_retry_budget() -> u32 {
    2
}
fn default_retry_delay_ms() -> u64 {
    100
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_workers() -> usize {
    1
}

impl RunConfig {
    /// Parse a TOML config file and apply environment overrides.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg: RunConfig = toml::from_str(&raw)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_env_overrides();
        Ok(cfg)
    }

    /// Environment wins over the file for service endpoints and auth.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(url) = std::env::var(ENV_LLM_ENDPOINT) {
            self.llm.endpoint = Some(url);
        }
        if let Ok(url) = std::env::var(ENV_EMBED_ENDPOINT) {
            let dim = match &self.embedder {
                EmbedderConfig::Service { dim, .. } => *dim,
                EmbedderConfig::HashedNgram { dim, .. } => *dim,
            };
            self.embedder = EmbedderConfig::Service {
                endpoint: url,
                dim,
                timeout_secs: default_timeout_secs(),
            };
        }
        if let Ok(url) = std::env::var(ENV_RERANK_ENDPOINT) {
            self.reranker = RerankerConfig::Service {
                endpoint: url,
                timeout_secs: default_timeout_secs(),
            };
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        for (label, path) in [("corpus_path", &self.corpus_path), ("query_path", &self.query_path)] {
            if !path.exists() {
                problems.push(format!("{label} {} does not exist", path.display()));
            }
        }
        if let Some(path) = &self.embeddings_path {
            if !path.exists() {
                problems.push(format!("embeddings_path {} does not exist", path.display()));
            }
        }
        if self.k == 0 {
            problems.push("k must be at least 1".to_string());
        }
        if self.rerank_budget == 0 {
            problems.push("rerank_budget must be at least 1".to_string());
        }
        if self.rrf_k <= 0.0 || self.hybrid_k <= 0.0 {
            problems.push("rrf_k and hybrid_k must be positive".to_string());
        }
        if self.chunk_size == 0 || self.chunk_overlap >= self.chunk_size {
            problems.push("chunk_size must exceed chunk_overlap".to_string());
        }
        if self.workers == 0 {
            problems.push("workers must be at least 1".to_string());
        }
        if self.replay && self.llm.endpoint.is_some() {
            log::info!("replay mode: the configured rewrite endpoint will not be called");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(problems.join("; ")))
        }
    }

    fn auth_from_env() -> Option<String> {
        std::env::var(ENV_AUTH_TOKEN).ok().map(|t| format!("Bearer {t}"))
    }

    fn endpoint(url: &str, timeout_secs: u64) -> Endpoint {
        let mut endpoint = Endpoint::new(url).with_timeout(Duration::from_secs(timeout_secs));
        if let Some(auth) = Self::auth_from_env() {
            endpoint = endpoint.with_auth(auth);
        }
        endpoint
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn Embedder>, HarnessError> {
        match &self.embedder {
            EmbedderConfig::HashedNgram { dim, ngram } => Ok(Arc::new(
                HashedNgramEmbedder::new(*dim, *ngram).map_err(|e| HarnessError::Config(e.to_string()))?,
            )),
            EmbedderConfig::Service {
                endpoint,
                dim,
                timeout_secs,
            } => Ok(Arc::new(HttpEmbedder::new(
                Self::endpoint(endpoint, *timeout_secs),
                *dim,
            ))),
        }
    }

    pub fn build_reranker(&self) -> Arc<dyn Reranker> {
        match &self.reranker {
            RerankerConfig::Lexical { k1, b } => Arc::new(LexicalReranker::new(*k1, *b)),
            RerankerConfig::Service {
                endpoint,
                timeout_secs,
            } => Arc::new(HttpReranker::new(Self::endpoint(endpoint, *timeout_secs))),
        }
    }

    /// `None` in replay mode or when no endpoint is configured; rewrite
    /// generation then relies entirely on the cache.
    pub fn build_llm_client(&self) -> Option<Box<dyn LlmClient>> {
        if self.replay {
            return None;
        }
        self.llm
            .endpoint
            .as_deref()
            .map(|url| Box::new(HttpLlmClient::new(Self::endpoint(url, self.llm.timeout_secs))) as Box<dyn LlmClient>)
    }

    /// Per-query retrieval scope: each configured filter key present in
    /// the query's metadata becomes an equality requirement.
    pub fn filter_for(&self, metadata: &BTreeMap<String, String>) -> crate::index::MetadataFilter {
        let mut filter = crate::index::MetadataFilter::empty();
        for key in &self.filter_keys {
            if let Some(value) = metadata.get(key) {
                filter = filter.require(key, value);
            }
        }
        filter
    }

    pub fn fusion_config(&self) -> crate::rank::FusionConfig {
        crate::rank::FusionConfig {
            rrf_k: self.rrf_k,
            k: self.k,
            rerank_budget: self.rerank_budget,
        }
    }

    /// The resolved configuration as TOML, written into the artifact so a
    /// replay run can be reproduced from the snapshot alone.
    pub fn snapshot(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
