//! Query reformulation: renders one of three rewriting prompts, sends it
//! to an LLM service, and caches the result so replay runs are fully
//! offline and deterministic.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QueryRecord;
use crate::service::{response_field, Endpoint, HttpClient, TransportError, UreqClient};

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("no cached rewrite for question {question:?} under prompt {prompt} and no client configured")]
    NoClient { question: String, prompt: PromptType },
    #[error("rewrite service returned an empty reformulation")]
    EmptyRewrite,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl RewriteError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transport(t) if t.is_transient())
    }
}

/// The three rewriting strategies, from conservative rewording to
/// recall-maximizing reformulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptType {
    P1,
    P2,
    P3,
}

impl PromptType {
    pub const ALL: [PromptType; 3] = [PromptType::P1, PromptType::P2, PromptType::P3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::P1 => "p1",
            Self::P2 => "p2",
            Self::P3 => "p3",
        }
    }
}

impl fmt::Display for PromptType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(Self::P1),
            "p2" => Ok(Self::P2),
            "p3" => Ok(Self::P3),
            other => Err(format!("unknown prompt type {other:?} (expected p1, p2, or p3)")),
        }
    }
}

const PROMPT_P1: &str = "<|instruction|>\n\
You are a technical query rewriter.\n\
You will be given a technical query, case details and product information.\n\
Re-write the query without adding details about the product or case.\n\
\n\
Guidelines:\n\
- Simply give the output, not your reasoning for it\n\
- Don't include any extra details other than the ones provided in the input\n\
- Keep it Direct and Concise\n\
</instruction>";

const PROMPT_P2: &str = "<|instruction|>\n\
You are a technical query rewriter.\n\
Your role is to re-write a given technical query for  Troubleshooting.\n\
Utilize the given information to re-write the technical query such that it is optimized for a RAG system.\n\
\n\
Guidelines:\n\
- Simply give the output, not your reasoning for it\n\
- Don't include any extra details other than the ones provided in the input\n\
- Make the query precise and detail-oriented without making it too long.\n\
</instruction>";

const PROMPT_P3: &str = "<|instruction|>\n\
You are a retrieval strategist.\n\
Your job is to generate diverse, high-quality rewrites of a technical query to maximize document recall in a RAG fusion pipeline.\n\
You must only return ONE high-quality re-write.\n\
\n\
Guidelines:\n\
- Simply give the output, not your reasoning for it\n\
- Don't include any extra details other than the ones provided in the input\n\
</instruction>";

/// A rewriting instruction block plus the rule for attaching the question
/// and its metadata.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    prompt_type: PromptType,
    instruction: &'static str,
}

impl PromptTemplate {
    pub fn for_type(prompt_type: PromptType) -> Self {
        let instruction = match prompt_type {
            PromptType::P1 => PROMPT_P1,
            PromptType::P2 => PROMPT_P2,
            PromptType::P3 => PROMPT_P3,
        };
        Self {
            prompt_type,
            instruction,
        }
    }

    pub fn prompt_type(&self) -> PromptType {
        self.prompt_type
    }

    pub fn instruction(&self) -> &'static str {
        self.instruction
    }

    /// Instruction block verbatim, then the question, then one
    /// `key: value` line per metadata entry in key order:
    ///
    /// ```text
    /// <instruction>
    ///
    /// Question: <question>
    /// <key>: <value>
    /// ```
    pub fn render(&self, query: &QueryRecord) -> String {
        let mut prompt = format!("{}\n\nQuestion: {}", self.instruction, query.question);
        for (key, value) in &query.metadata {
            prompt.push_str(&format!("\n{key}: {value}"));
        }
        prompt
    }
}

/// Render the prompt sent to the rewrite service for `query`.
pub fn render_prompt(prompt_type: PromptType, query: &QueryRecord) -> String {
    PromptTemplate::for_type(prompt_type).render(query)
}

/// Where a cached rewrite came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Loaded from the query dataset's replay field.
    Dataset,
    /// Produced by a live service call during this run.
    Live,
}

/// Exact-match cache keyed by (question, prompt type). A hit bypasses the
/// rewrite service entirely. Reads may be concurrent; writes are
/// serialized by the lock.
#[derive(Debug, Default)]
pub struct RewriteCache {
    entries: RwLock<HashMap<(String, PromptType), (String, Provenance)>>,
}

impl RewriteCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seed the cache from the query dataset's per-prompt replay entries.
    pub fn from_queries(queries: &[QueryRecord]) -> Self {
        let cache = Self::new();
        {
            let mut entries = cache.entries.write().expect("cache lock");
            for query in queries {
                let Some(map) = &query.q2 else { continue };
                for (key, rewrite) in map {
                    if let Ok(prompt_type) = key.parse::<PromptType>() {
                        entries.insert(
                            (query.question.clone(), prompt_type),
                            (rewrite.clone(), Provenance::Dataset),
                        );
                    }
                }
            }
        }
        cache
    }

    pub fn get(&self, question: &str, prompt_type: PromptType) -> Option<String> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&(question.to_string(), prompt_type))
            .map(|(rewrite, _)| rewrite.clone())
    }

    pub fn provenance(&self, question: &str, prompt_type: PromptType) -> Option<Provenance> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&(question.to_string(), prompt_type))
            .map(|(_, provenance)| *provenance)
    }

    pub fn insert(
        &self,
        question: &str,
        prompt_type: PromptType,
        rewrite: String,
        provenance: Provenance,
    ) {
        self.entries
            .write()
            .expect("cache lock")
            .insert((question.to_string(), prompt_type), (rewrite, provenance));
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rewrite-service interface: one prompt in, one reformulation out.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, TransportError>;
}

/// Client for a service speaking `{"prompt": ...} -> {"text": ...}`.
pub struct HttpLlmClient {
    client: Box<dyn HttpClient>,
    url: String,
}

impl HttpLlmClient {
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

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        let body = serde_json::json!({ "prompt": prompt });
        let response = self.client.post_json(&self.url, &body)?;
        let text = response_field(&self.url, &response, "text")?;
        text.as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Malformed {
                url: self.url.clone(),
                detail: "field \"text\" is not a string".to_string(),
            })
    }
}

/// The reformulation for one query plus the wall-clock cost of producing
/// it (zero for cache hits).
#[derive(Debug, Clone)]
pub struct Rewrite {
    pub text: String,
    pub latency: Duration,
    pub provenance: Provenance,
}

/// Produce the reformulation for `query`, consulting the cache first.
/// On a miss the rendered prompt goes to `client`, the reply is trimmed
/// of surrounding whitespace, cached, and returned with the call latency.
/// A transport failure leaves no cache entry behind.
pub fn generate_q2(
    query: &QueryRecord,
    prompt_type: PromptType,
    client: Option<&dyn LlmClient>,
    cache: &RewriteCache,
) -> Result<Rewrite, RewriteError> {
    if let Some(text) = cache.get(&query.question, prompt_type) {
        let provenance = cache
            .provenance(&query.question, prompt_type)
            .unwrap_or(Provenance::Dataset);
        return Ok(Rewrite {
            text,
            latency: Duration::ZERO,
            provenance,
        });
    }
    let client = client.ok_or_else(|| RewriteError::NoClient {
        question: query.question.clone(),
        prompt: prompt_type,
    })?;
    let prompt = render_prompt(prompt_type, query);
    let started = Instant::now();
    let reply = client.complete(&prompt)?;
    let latency = started.elapsed();
    let text = reply.trim().to_string();
    if text.is_empty() {
        return Err(RewriteError::EmptyRewrite);
    }
    cache.insert(&query.question, prompt_type, text.clone(), Provenance::Live);
    Ok(Rewrite {
        text,
        latency,
        provenance: Provenance::Live,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn query(question: &str) -> QueryRecord {
        QueryRecord {
            question: question.to_string(),
            ground_truth: ["KB1".to_string()].into(),
            metadata: BTreeMap::new(),
            q2: None,
        }
    }

    struct CountingClient {
        calls: AtomicUsize,
        reply: Result<String, u16>,
    }

    impl CountingClient {
        fn replying(reply: &str) -> Self {
            Self {
                calls: AtomicUsize::new(0),
                reply: Ok(reply.to_string()),
            }
        }

        fn failing(status: u16) -> Self {
            Self {
                calls: AtomicUsize::new(0),
                reply: Err(status),
            }
        }
    }

    impl LlmClient for CountingClient {
        fn complete(&self, _prompt: &str) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match &self.reply {
                Ok(text) => Ok(text.clone()),
                Err(status) => Err(TransportError::Status {
                    url: "stub".to_string(),
                    status: *status,
                }),
            }
        }
    }

    #[test]
    fn rendered_prompt_starts_with_instruction_block() {
        let q = query("How do I reset X?");
        let rendered = render_prompt(PromptType::P1, &q);
        assert!(rendered.starts_with("<|instruction|>\nYou are a technical query rewriter."));
        assert!(rendered.contains("Question: How do I reset X?"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let q = query("How do I reset X?");
        assert_eq!(render_prompt(PromptType::P2, &q), render_prompt(PromptType::P2, &q));
    }

    #[test]
    fn p3_demands_a_single_rewrite() {
        let rendered = render_prompt(PromptType::P3, &query("q"));
        assert!(rendered.contains("ONE high-quality re-write"));
    }

    #[test]
    fn metadata_lines_follow_the_question_in_key_order() {
        let mut q = query("q");
        q.metadata.insert("product".to_string(), "X".to_string());
        q.metadata.insert("category".to_string(), "auth".to_string());
        let rendered = render_prompt(PromptType::P1, &q);
        assert!(rendered.ends_with("Question: q\ncategory: auth\nproduct: X"));
    }

    #[test]
    fn cache_hit_skips_the_service() {
        let cache = RewriteCache::new();
        cache.insert("q", PromptType::P1, "cached".to_string(), Provenance::Dataset);
        let client = CountingClient::replying("live");
        let rewrite = generate_q2(&query("q"), PromptType::P1, Some(&client), &cache).unwrap();
        assert_eq!(rewrite.text, "cached");
        assert_eq!(rewrite.latency, Duration::ZERO);
        assert_eq!(client.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn cache_miss_calls_service_and_stores_trimmed_reply() {
        let cache = RewriteCache::new();
        let client = CountingClient::replying("  fresh rewrite \n");
        let rewrite = generate_q2(&query("q"), PromptType::P2, Some(&client), &cache).unwrap();
        assert_eq!(rewrite.text, "fresh rewrite");
        assert_eq!(client.calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.get("q", PromptType::P2).as_deref(), Some("fresh rewrite"));
        assert_eq!(cache.provenance("q", PromptType::P2), Some(Provenance::Live));
    }

    #[test]
    fn failed_call_writes_no_cache_entry() {
        let cache = RewriteCache::new();
        let client = CountingClient::failing(503);
        let err = generate_q2(&query("q"), PromptType::P1, Some(&client), &cache).unwrap_err();
        assert!(err.is_transient());
        assert!(cache.is_empty());
    }

    #[test]
    fn missing_client_and_cache_is_a_permanent_error() {
        let cache = RewriteCache::new();
        let err = generate_q2(&query("q"), PromptType::P1, None, &cache).unwrap_err();
        assert!(!err.is_transient());
    }

    #[test]
    fn cache_seeds_from_query_replay_fields() {
        let mut q = query("how to rotate keys");
        q.q2 = Some(
            [
                ("p1".to_string(), "rotate keys".to_string()),
                ("p3".to_string(), "key rotation steps".to_string()),
            ]
            .into(),
        );
        let cache = RewriteCache::from_queries(&[q.clone()]);
        assert_eq!(cache.get(&q.question, PromptType::P1).as_deref(), Some("rotate keys"));
        assert_eq!(cache.get(&q.question, PromptType::P2), None);
        assert_eq!(
            cache.provenance(&q.question, PromptType::P3),
            Some(Provenance::Dataset)
        );
    }

    #[test]
    fn replay_cache_makes_generation_deterministic_without_calls() {
        let mut q = query("q");
        q.q2 = Some([("p1".to_string(), "stable".to_string())].into());
        let cache = RewriteCache::from_queries(std::slice::from_ref(&q));
        let first = generate_q2(&q, PromptType::P1, None, &cache).unwrap();
        let second = generate_q2(&q, PromptType::P1, None, &cache).unwrap();
        assert_eq!(first.text, second.text);
        assert_eq!(second.latency, Duration::ZERO);
    }
}
