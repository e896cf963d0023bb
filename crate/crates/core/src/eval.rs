//! KB-level evaluation of chunk-level rankings.
//!
//! Rankings are produced over chunks, but correctness is judged at the
//! article level: a query is a hit when any chunk of any of its
//! ground-truth articles appears within the inspected depth, regardless
//! of which chunk it is.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::RankedList;
use crate::rank::MethodName;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth set is empty")]
    EmptyGroundTruth,
    #[error("query {query} is missing a record for method {method}")]
    MissingRecord { query: usize, method: MethodName },
    #[error("query {query} has more than one record for method {method}")]
    DuplicateRecord { query: usize, method: MethodName },
}

/// Project a chunk ranking to article ids, preserving positions.
/// Duplicate articles are retained so rank arithmetic stays aligned.
pub fn to_kb_level(list: &RankedList) -> Vec<String> {
    list.ids().map(|id| id.source_kb().to_string()).collect()
}

/// Whether any of the first `depth` positions maps to a ground-truth
/// article, and the smallest such 1-based rank.
pub fn hit_at(
    list: &RankedList,
    ground_truth: &BTreeSet<String>,
    depth: usize,
) -> Result<(bool, Option<usize>), EvalError> {
    if ground_truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let rank = list
        .ids()
        .take(depth)
        .position(|id| ground_truth.contains(id.source_kb()))
        .map(|i| i + 1);
    Ok((rank.is_some(), rank))
}

/// Hit outcome of one (query, method) pair at the standard depths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitRecord {
    pub query_index: usize,
    pub method: MethodName,
    /// Smallest rank whose chunk belongs to a ground-truth article,
    /// if one appears within the full inspected depth.
    pub hit_rank: Option<usize>,
    pub hit1: bool,
    pub hit3: bool,
    pub hit_k: bool,
}

impl HitRecord {
    /// Evaluate a final (already truncated) list at depths 1, 3, and `k`.
    pub fn evaluate(
        query_index: usize,
        method: MethodName,
        list: &RankedList,
        ground_truth: &BTreeSet<String>,
        k: usize,
    ) -> Result<Self, EvalError> {
        let (hit_k, hit_rank) = hit_at(list, ground_truth, k)?;
        Ok(Self {
            query_index,
            method,
            hit_rank,
            hit1: hit_rank.is_some_and(|r| r <= 1),
            hit3: hit_rank.is_some_and(|r| r <= 3),
            hit_k,
        })
    }

    /// Hit at an arbitrary depth not above the record's `k`.
    pub fn hit_at_depth(&self, depth: usize) -> bool {
        self.hit_rank.is_some_and(|r| r <= depth)
    }
}

/// Per-method accuracy fractions over the evaluated query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub top1: f64,
    pub top3: f64,
    pub hit_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub n: usize,
    pub rows: BTreeMap<MethodName, MethodMetrics>,
}

impl SummaryMetrics {
    pub fn get(&self, method: MethodName) -> &MethodMetrics {
        &self.rows[&method]
    }
}

/// Aggregate hit records into the summary table. Every evaluated query
/// must contribute exactly one record per method; `n` of zero yields
/// all-zero fractions.
pub fn summarize(records: &[HitRecord], n: usize) -> Result<SummaryMetrics, EvalError> {
    let mut counts: BTreeMap<MethodName, (usize, usize, usize)> =
        MethodName::ALL.iter().map(|m| (*m, (0, 0, 0))).collect();
    let mut seen: BTreeSet<(usize, MethodName)> = BTreeSet::new();
    for record in records {
        if !seen.insert((record.query_index, record.method)) {
            return Err(EvalError::DuplicateRecord {
                query: record.query_index,
                method: record.method,
            });
        }
        let entry = counts.get_mut(&record.method).expect("all methods present");
        entry.0 += usize::from(record.hit1);
        entry.1 += usize::from(record.hit3);
        entry.2 += usize::from(record.hit_k);
    }
    for &(query, _) in &seen {
        for method in MethodName::ALL {
            if !seen.contains(&(query, method)) {
                return Err(EvalError::MissingRecord { query, method });
            }
        }
    }
    let rows = counts
        .into_iter()
        .map(|(method, (top1, top3, hit_k))| {
            let frac = |count: usize| {
                if n == 0 {
                    0.0
                } else {
                    count as f64 / n as f64
                }
            };
            (
                method,
                MethodMetrics {
                    top1: frac(top1),
                    top3: frac(top3),
                    hit_k: frac(hit_k),
                },
            )
        })
        .collect();
    Ok(SummaryMetrics { n, rows })
}

/// `0.3043`-style fixed formatting used in the summary table.
pub fn format_fraction(value: f64) -> String {
    format!("{value:.4}")
}

/// `30.43`-style percentage formatting.
pub fn format_percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}
