//! Knowledge-base ingestion: articles, chunking, chunk-aware identifiers,
//! and the query dataset.
//!
//! A chunk is the atomic retrieval unit. Its identifier has the canonical
//! form `source_kb::chunk=index`, which survives fusion and reranking so
//! that distinct chunks of the same article are never collapsed and can be
//! mapped back to their article for evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator reserved for chunk identifiers; forbidden inside `kb_id`.
pub const CHUNK_SEPARATOR: &str = "::chunk=";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("kb_id must be non-empty and must not contain \"::\": {0:?}")]
    InvalidKbId(String),
    #[error("malformed chunk id {0:?}: expected `source_kb::chunk=<index>`")]
    MalformedChunkId(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {count} invalid record(s):\n{report}")]
    InvalidRecords {
        path: String,
        count: usize,
        report: String,
    },
    #[error("chunk_size must exceed overlap (chunk_size={chunk_size}, overlap={overlap})")]
    BadChunkParams { chunk_size: usize, overlap: usize },
}

/// A single knowledge-base document. `kb_id` is the unit at which
/// relevance is judged; `metadata` carries filter fields such as the
/// product category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbArticle {
    pub kb_id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl KbArticle {
    pub fn new(
        kb_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let kb_id = kb_id.into();
        validate_kb_id(&kb_id)?;
        Ok(Self {
            kb_id,
            text: text.into(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

fn validate_kb_id(kb_id: &str) -> Result<(), CorpusError> {
    if kb_id.is_empty() || kb_id.contains("::") {
        return Err(CorpusError::InvalidKbId(kb_id.to_string()));
    }
    Ok(())
}

/// Globally unique chunk identifier with canonical form
/// `source_kb::chunk=index`. Two identifiers are equal iff their canonical
/// strings are equal; ordering is lexicographic on the canonical string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChunkId(String);

impl ChunkId {
    /// Mint an identifier from its parts. Rejects a `source_kb` that is
    /// empty or contains the reserved `::` separator.
    pub fn new(source_kb: &str, chunk_index: usize) -> Result<Self, CorpusError> {
        validate_kb_id(source_kb)?;
        Ok(Self(format!("{source_kb}{CHUNK_SEPARATOR}{chunk_index}")))
    }

    /// Parse a canonical identifier string. The input must contain exactly
    /// one `::chunk=` separator, a valid `source_kb` prefix, and a decimal
    /// index with no leading zeros, so that `parse(format(id))` round-trips
    /// bit-exactly.
    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        let malformed = || CorpusError::MalformedChunkId(s.to_string());
        let pos = s.find(CHUNK_SEPARATOR).ok_or_else(malformed)?;
        let (source, rest) = s.split_at(pos);
        let digits = &rest[CHUNK_SEPARATOR.len()..];
        if source.is_empty() || source.contains("::") {
            return Err(malformed());
        }
        if digits.is_empty()
            || !digits.bytes().all(|b| b.is_ascii_digit())
            || (digits.len() > 1 && digits.starts_with('0'))
        {
            return Err(malformed());
        }
        digits.parse::<usize>().map_err(|_| malformed())?;
        Ok(Self(s.to_string()))
    }

    /// The article this chunk came from (the canonical string with the
    /// chunk suffix removed).
    pub fn source_kb(&self) -> &str {
        let pos = self.0.find(CHUNK_SEPARATOR).expect("validated on construction");
        &self.0[..pos]
    }

    pub fn chunk_index(&self) -> usize {
        let pos = self.0.find(CHUNK_SEPARATOR).expect("validated on construction");
        self.0[pos + CHUNK_SEPARATOR.len()..]
            .parse()
            .expect("validated on construction")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ChunkId {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<ChunkId> for String {
    fn from(id: ChunkId) -> Self {
        id.0
    }
}

/// Map a chunk identifier string back to its article id.
pub fn source_of(id: &str) -> Result<String, CorpusError> {
    Ok(ChunkId::parse(id)?.source_kb().to_string())
}

/// A text segment of one article, carrying the article's metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub source_kb: String,
    pub chunk_index: usize,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

/// Split an article into chunks of `chunk_size` whitespace tokens,
/// consecutive chunks sharing `overlap` tokens. Every chunk except
/// possibly the last has exactly `chunk_size` tokens; indices are
/// assigned in text order from 0.
///
/// Tokens here are whitespace-delimited words; chunk text is the tokens
/// re-joined with single spaces, so with `overlap = 0` the chunks
/// partition the article's token stream exactly.
pub fn chunk_article(
    article: &KbArticle,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(CorpusError::BadChunkParams {
            chunk_size,
            overlap,
        });
    }
    let tokens: Vec<&str> = article.text.split_whitespace().collect();
    if tokens.is_empty() {
        log::warn!("article {} has no tokens; producing no chunks", article.kb_id);
        return Ok(Vec::new());
    }

    let stride = chunk_size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + chunk_size).min(tokens.len());
        let chunk_index = chunks.len();
        chunks.push(Chunk {
            id: ChunkId::new(&article.kb_id, chunk_index)?,
            source_kb: article.kb_id.clone(),
            chunk_index,
            text: tokens[start..end].join(" "),
            metadata: article.metadata.clone(),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// One evaluation query: the original question, the set of articles
/// counted as correct, filter metadata, and optionally cached
/// reformulations keyed by prompt type (for replay runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub question: String,
    pub ground_truth: BTreeSet<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q2: Option<BTreeMap<String, String>>,
}

impl QueryRecord {
    fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".to_string());
        }
        if self.ground_truth.is_empty() {
            return Err("ground_truth is empty".to_string());
        }
        for kb_id in &self.ground_truth {
            if validate_kb_id(kb_id).is_err() {
                return Err(format!("ground_truth entry {kb_id:?} is not a valid kb_id"));
            }
        }
        Ok(())
    }
}

/// Load a corpus file: one JSON article per line, blank lines ignored.
/// Either every record loads or the error reports every bad line.
pub fn load_corpus(path: &Path) -> Result<Vec<KbArticle>, CorpusError> {
    load_lines(path, |line_no, line, seen: &mut BTreeSet<String>| {
        let article: KbArticle = serde_json::from_str(line)
            .map_err(|e| format!("line {line_no}: {e}"))?;
        validate_kb_id(&article.kb_id)
            .map_err(|_| format!("line {line_no}: invalid kb_id {:?}", article.kb_id))?;
        if !seen.insert(article.kb_id.clone()) {
            return Err(format!("line {line_no}: duplicate kb_id {:?}", article.kb_id));
        }
        Ok(article)
    })
}

/// Load a query file: one JSON record per line with `question`,
/// `ground_truth`, optional `metadata`, and optional per-prompt `q2`.
pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>, CorpusError> {
    load_lines(path, |line_no, line, _seen: &mut BTreeSet<String>| {
        let record: QueryRecord = serde_json::from_str(line)
            .map_err(|e| format!("line {line_no}: {e}"))?;
        record
            .validate()
            .map_err(|msg| format!("line {line_no}: {msg}"))?;
        Ok(record)
    })
}

fn load_lines<T>(
    path: &Path,
    mut parse: impl FnMut(usize, &str, &mut BTreeSet<String>) -> Result<T, String>,
) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse(idx + 1, &line, &mut seen) {
            Ok(record) => records.push(record),
            Err(issue) => issues.push(issue),
        }
    }
    if issues.is_empty() {
        Ok(records)
    } else {
        Err(CorpusError::InvalidRecords {
            path: path.display().to_string(),
            count: issues.len(),
            report: issues.join("\n"),
        })
    }
}
