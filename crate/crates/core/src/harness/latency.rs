//! Per-query stage latencies and their dataset aggregation.

use serde::{Deserialize, Serialize};

/// Seconds spent in each stage for one query, from a monotonic clock.
/// `retrieval_combined` covers both queries' retrieval and is therefore
/// never below `retrieval_q1`; `rerank` is the mean cost of one rerank
/// invocation within the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLatency {
    pub q2_generation: f64,
    pub retrieval_q1: f64,
    pub retrieval_combined: f64,
    pub rrf: f64,
    pub rerank: f64,
}

impl QueryLatency {
    fn stage(&self, stage: LatencyStage) -> f64 {
        match stage {
            LatencyStage::Q2Generation => self.q2_generation,
            LatencyStage::RetrievalQ1 => self.retrieval_q1,
            LatencyStage::RetrievalCombined => self.retrieval_combined,
            LatencyStage::Rrf => self.rrf,
            LatencyStage::Rerank => self.rerank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyStage {
    Q2Generation,
    RetrievalQ1,
    RetrievalCombined,
    Rrf,
    Rerank,
}

impl LatencyStage {
    pub const ALL: [LatencyStage; 5] = [
        LatencyStage::Q2Generation,
        LatencyStage::RetrievalQ1,
        LatencyStage::RetrievalCombined,
        LatencyStage::Rrf,
        LatencyStage::Rerank,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Q2Generation => "fusion_question_generation",
            Self::RetrievalQ1 => "retrieval_q1",
            Self::RetrievalCombined => "retrieval_q1_q2_combined",
            Self::Rrf => "rrf",
            Self::Rerank => "rerank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Mean and tail percentiles per stage across all evaluated queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub n: usize,
    pub stages: Vec<(LatencyStage, StageSummary)>,
}

impl LatencySummary {
    pub fn aggregate(latencies: &[QueryLatency]) -> Self {
        let stages = LatencyStage::ALL
            .into_iter()
            .map(|stage| {
                let mut values: Vec<f64> =
                    latencies.iter().map(|l| l.stage(stage)).collect();
                values.sort_by(f64::total_cmp);
                (stage, summarize_sorted(&values))
            })
            .collect();
        Self {
            n: latencies.len(),
            stages,
        }
    }
}

fn summarize_sorted(values: &[f64]) -> StageSummary {
    if values.is_empty() {
        return StageSummary {
            mean: 0.0,
            p50: 0.0,
            p95: 0.0,
            p99: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    StageSummary {
        mean,
        p50: percentile_sorted(values, 0.50),
        p95: percentile_sorted(values, 0.95),
        p99: percentile_sorted(values, 0.99),
    }
}

/// Nearest-rank percentile over an ascending-sorted slice.
fn percentile_sorted(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let rank = (q * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latency(value: f64) -> QueryLatency {
        QueryLatency {
            q2_generation: value,
            retrieval_q1: value,
            retrieval_combined: value * 2.0,
            rrf: value / 10.0,
            rerank: value / 2.0,
        }
    }

    #[test]
    fn combined_retrieval_dominates_single_query() {
        let l = latency(1.0);
        assert!(l.retrieval_combined >= l.retrieval_q1);
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(percentile_sorted(&values, 0.50), 50.0);
        assert_eq!(percentile_sorted(&values, 0.95), 95.0);
        assert_eq!(percentile_sorted(&values, 0.99), 99.0);
        assert_eq!(percentile_sorted(&[7.0], 0.99), 7.0);
    }

    #[test]
    fn aggregate_reports_every_stage() {
        let latencies: Vec<QueryLatency> = (1..=10).map(|v| latency(v as f64)).collect();
        let summary = LatencySummary::aggregate(&latencies);
        assert_eq!(summary.n, 10);
        assert_eq!(summary.stages.len(), 5);
        let (stage, retrieval) = &summary.stages[1];
        assert_eq!(stage.label(), "retrieval_q1");
        assert!((retrieval.mean - 5.5).abs() < 1e-12);
        assert_eq!(retrieval.p50, 5.0);
        assert_eq!(retrieval.p99, 10.0);
    }

    #[test]
    fn empty_aggregate_is_all_zero() {
        let summary = LatencySummary::aggregate(&[]);
        assert_eq!(summary.n, 0);
        assert!(summary.stages.iter().all(|(_, s)| s.mean == 0.0));
    }
}
