//! Paired significance testing and query-overlap diagnostics.
//!
//! Methods are compared on identical query sets, so hit/miss outcomes are
//! paired: the exact McNemar test looks only at discordant pairs, and
//! Benjamini–Hochberg step-up adjustment controls the false discovery
//! rate across the comparison family.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::HitRecord;
use crate::index::RankedList;
use crate::rank::MethodName;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("p-value {0} outside (0, 1]")]
    BadPValue(f64),
    #[error("method {0} has no hit records")]
    MissingMethod(MethodName),
    #[error("methods were evaluated on different query sets")]
    UnpairedQuerySets,
}

/// Paired hit outcomes for one (baseline, variant) comparison at a fixed
/// depth. `b` counts variant-only hits, `c` baseline-only hits.
#[derive(Debug, Clone)]
pub struct PairedOutcomes {
    pub baseline: Vec<bool>,
    pub variant: Vec<bool>,
}

impl PairedOutcomes {
    pub fn discordant_counts(&self) -> (usize, usize) {
        let mut b = 0;
        let mut c = 0;
        for (&base, &var) in self.baseline.iter().zip(&self.variant) {
            match (base, var) {
                (false, true) => b += 1,
                (true, false) => c += 1,
                _ => {}
            }
        }
        (b, c)
    }

    pub fn baseline_hit_rate(&self) -> f64 {
        rate(&self.baseline)
    }

    pub fn variant_hit_rate(&self) -> f64 {
        rate(&self.variant)
    }
}

fn rate(hits: &[bool]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
}

/// Two-sided exact McNemar test on discordant counts:
/// `p = min(1, 2 · P(X ≤ min(b, c)))` for `X ~ Binomial(b + c, 1/2)`,
/// computed with exact integer binomial sums. No discordant pairs means
/// no evidence either way, so `p = 1`.
pub fn mcnemar_exact(b: usize, c: usize) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let m = b.min(c);
    // Σ_{i=0..m} C(n, i), exactly.
    let mut sum = BigUint::zero();
    let mut coefficient = BigUint::one();
    for i in 0..=m {
        sum += &coefficient;
        // C(n, i+1) = C(n, i) · (n − i) / (i + 1)
        coefficient = coefficient * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    let tail = Ratio::new(sum, BigUint::one() << n);
    let p = Ratio::from_integer(BigUint::from(2u32)) * tail;
    p.to_f64().unwrap_or(1.0).min(1.0)
}

/// Benjamini–Hochberg step-up adjustment. Values are ranked ascending,
/// `p·m/rank` is cumulatively minimized from the largest rank down, and
/// the adjusted values are returned in input order, capped at 1.
pub fn bh_adjust(pvalues: &[f64]) -> Result<Vec<f64>, StatsError> {
    for &p in pvalues {
        if !(p > 0.0 && p <= 1.0) {
            return Err(StatsError::BadPValue(p));
        }
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));

    let mut adjusted_sorted = vec![0.0; m];
    let mut running_min = f64::INFINITY;
    for rank in (1..=m).rev() {
        let p = pvalues[order[rank - 1]];
        let scaled = (p * m as f64 / rank as f64).min(1.0);
        running_min = running_min.min(scaled);
        adjusted_sorted[rank - 1] = running_min;
    }

    let mut adjusted = vec![0.0; m];
    for (rank_index, &input_index) in order.iter().enumerate() {
        adjusted[input_index] = adjusted_sorted[rank_index];
    }
    Ok(adjusted)
}

/// One row of the paired-significance table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub method: MethodName,
    /// Variant hit rate at the tested depth, as a fraction.
    pub hit_rate: f64,
    /// Variant minus baseline, in percentage points.
    pub delta_pp: f64,
    pub b: usize,
    pub c: usize,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

/// Paired McNemar tests of each variant against `baseline` at `depth`,
/// BH-adjusted across exactly the listed variants. Excluding a variant
/// from the list removes it from the correction family.
pub fn significance_table(
    records: &[HitRecord],
    baseline: MethodName,
    variants: &[MethodName],
    depth: usize,
) -> Result<Vec<SignificanceRow>, StatsError> {
    let baseline_hits = hits_by_query(records, baseline, depth)?;
    let mut rows = Vec::with_capacity(variants.len());
    let mut raw_ps = Vec::with_capacity(variants.len());
    for &variant in variants {
        let variant_hits = hits_by_query(records, variant, depth)?;
        let same_queries = variant_hits.len() == baseline_hits.len()
            && variant_hits
                .iter()
                .zip(&baseline_hits)
                .all(|((vq, _), (bq, _))| vq == bq);
        if !same_queries {
            return Err(StatsError::UnpairedQuerySets);
        }
        let outcomes = PairedOutcomes {
            baseline: baseline_hits.iter().map(|(_, h)| *h).collect(),
            variant: variant_hits.iter().map(|(_, h)| *h).collect(),
        };
        let (b, c) = outcomes.discordant_counts();
        let p_raw = mcnemar_exact(b, c);
        raw_ps.push(p_raw);
        rows.push(SignificanceRow {
            method: variant,
            hit_rate: outcomes.variant_hit_rate(),
            delta_pp: (outcomes.variant_hit_rate() - outcomes.baseline_hit_rate()) * 100.0,
            b,
            c,
            p_raw,
            p_adjusted: 1.0,
        });
    }
    let adjusted = bh_adjust(&raw_ps)?;
    for (row, p_adjusted) in rows.iter_mut().zip(adjusted) {
        row.p_adjusted = p_adjusted;
    }
    Ok(rows)
}

/// Hit outcomes for one method ordered by query index; pairing requires
/// each method to cover the same queries.
fn hits_by_query(
    records: &[HitRecord],
    method: MethodName,
    depth: usize,
) -> Result<Vec<(usize, bool)>, StatsError> {
    let mut hits: Vec<(usize, bool)> = records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| (r.query_index, r.hit_at_depth(depth)))
        .collect();
    if hits.is_empty() {
        return Err(StatsError::MissingMethod(method));
    }
    hits.sort_by_key(|(query, _)| *query);
    Ok(hits)
}

/// Source-set overlap between the two per-query reranked lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub overlap: usize,
    pub union: usize,
    pub jaccard: f64,
    /// Mean unique-source count of the two lists.
    pub uniq: f64,
}

/// Compare the unique source articles in the top-`depth` chunks of the
/// Q1 and Q2 reranked lists. Two empty lists yield a zero entry with
/// jaccard defined as 0.
pub fn overlap_diagnostics(
    q1_list: &RankedList,
    q2_list: &RankedList,
    depth: usize,
) -> OverlapEntry {
    let sources = |list: &RankedList| -> BTreeSet<String> {
        list.ids()
            .take(depth)
            .map(|id| id.source_kb().to_string())
            .collect()
    };
    let s1 = sources(q1_list);
    let s2 = sources(q2_list);
    let overlap = s1.intersection(&s2).count();
    let union = s1.len() + s2.len() - overlap;
    OverlapEntry {
        overlap,
        union,
        jaccard: if union == 0 {
            0.0
        } else {
            overlap as f64 / union as f64
        },
        uniq: (s1.len() + s2.len()) as f64 / 2.0,
    }
}

/// Dataset-level overlap means: the arithmetic mean of each per-query
/// value (the aggregate jaccard is the mean of per-query jaccards, not a
/// ratio of means). The per-query identity
/// `union = |S1| + |S2| − overlap` is checked on every entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub n: usize,
    pub mean_overlap: f64,
    pub mean_jaccard: f64,
    pub mean_union: f64,
    pub mean_uniq: f64,
}

impl OverlapStats {
    pub fn aggregate(entries: &[OverlapEntry]) -> Self {
        for entry in entries {
            debug_assert_eq!(
                entry.union as f64,
                2.0 * entry.uniq - entry.overlap as f64,
                "union identity violated"
            );
        }
        let n = entries.len();
        let mean = |f: &dyn Fn(&OverlapEntry) -> f64| {
            if n == 0 {
                0.0
            } else {
                entries.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n,
            mean_overlap: mean(&|e| e.overlap as f64),
            mean_jaccard: mean(&|e| e.jaccard),
            mean_union: mean(&|e| e.union as f64),
            mean_uniq: mean(&|e| e.uniq),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChunkId;
    use crate::index::Stage;

    #[test]
    fn no_discordant_pairs_gives_p_one() {
        assert_eq!(mcnemar_exact(0, 0), 1.0);
    }

    #[test]
    fn four_zero_matches_exact_tail() {
        // 2 · (1/2)^4 = 0.125
        assert!((mcnemar_exact(4, 0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn six_one_matches_exact_tail() {
        // 2 · (C(7,0) + C(7,1)) / 2^7 = 16/128 = 0.125
        assert!((mcnemar_exact(6, 1) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn mcnemar_is_symmetric_and_capped() {
        for b in 0usize..=30 {
            for c in 0usize..=(30 - b) {
                let p = mcnemar_exact(b, c);
                assert_eq!(p, mcnemar_exact(c, b));
                assert!(p > 0.0 && p <= 1.0);
            }
        }
        for b in 0usize..=15 {
            assert_eq!(mcnemar_exact(b, b), 1.0);
        }
    }

    #[test]
    fn mcnemar_handles_large_counts_without_overflow() {
        let p = mcnemar_exact(200, 150);
        assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn bh_passes_through_all_ones() {
        assert_eq!(bh_adjust(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn bh_matches_hand_step_up() {
        let adjusted = bh_adjust(&[0.005, 0.01, 0.03, 0.04]).unwrap();
        let expected = [0.02, 0.02, 0.04, 0.04];
        for (got, want) in adjusted.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn bh_single_value_is_identity() {
        assert_eq!(bh_adjust(&[0.37]).unwrap(), vec![0.37]);
    }

    #[test]
    fn bh_rejects_out_of_range_values() {
        assert!(bh_adjust(&[0.0]).is_err());
        assert!(bh_adjust(&[1.5]).is_err());
        assert!(bh_adjust(&[-0.1]).is_err());
        assert!(bh_adjust(&[f64::NAN]).is_err());
    }

    #[test]
    fn bh_preserves_input_order() {
        let adjusted = bh_adjust(&[0.04, 0.005, 0.03, 0.01]).unwrap();
        assert!((adjusted[0] - 0.04).abs() < 1e-12);
        assert!((adjusted[1] - 0.02).abs() < 1e-12);
        assert!((adjusted[2] - 0.04).abs() < 1e-12);
        assert!((adjusted[3] - 0.02).abs() < 1e-12);
    }

    fn record(query: usize, method: MethodName, hit_rank: Option<usize>) -> HitRecord {
        HitRecord {
            query_index: query,
            method,
            hit_rank,
            hit1: hit_rank.is_some_and(|r| r <= 1),
            hit3: hit_rank.is_some_and(|r| r <= 3),
            hit_k: hit_rank.is_some(),
        }
    }

    fn paired_records(baseline: &[bool], variant: &[bool]) -> Vec<HitRecord> {
        let mut records = Vec::new();
        for (query, (&b, &v)) in baseline.iter().zip(variant).enumerate() {
            records.push(record(query, MethodName::Baseline, b.then_some(1)));
            records.push(record(query, MethodName::RrfQ1Q2, v.then_some(1)));
        }
        records
    }

    #[test]
    fn identical_variant_has_zero_delta_and_p_one() {
        let hits = vec![true, false, true, false];
        let records = paired_records(&hits, &hits);
        let rows = significance_table(&records, MethodName::Baseline, &[MethodName::RrfQ1Q2], 3)
            .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].delta_pp, 0.0);
        assert_eq!(rows[0].p_raw, 1.0);
        assert_eq!(rows[0].p_adjusted, 1.0);
    }

    #[test]
    fn four_extra_hits_over_115_queries() {
        let mut baseline = vec![false; 115];
        let mut variant = vec![false; 115];
        for i in 0..40 {
            baseline[i] = true;
            variant[i] = true;
        }
        for i in 40..44 {
            variant[i] = true; // b = 4, c = 0
        }
        let records = paired_records(&baseline, &variant);
        let rows = significance_table(&records, MethodName::Baseline, &[MethodName::RrfQ1Q2], 3)
            .unwrap();
        assert_eq!((rows[0].b, rows[0].c), (4, 0));
        assert_eq!(format!("{:+.2}", rows[0].delta_pp), "+3.48");
        assert!((rows[0].p_raw - 0.125).abs() < 1e-15);
    }

    #[test]
    fn family_membership_changes_the_adjustment() {
        let mut baseline = vec![false; 20];
        let mut v1 = vec![false; 20];
        for i in 0..4 {
            v1[i] = true; // p = 0.125
        }
        baseline[10] = true;
        v1[10] = true;
        let mut records = paired_records(&baseline, &v1);
        // Second variant identical to baseline: p = 1.0.
        for (query, &b) in baseline.iter().enumerate() {
            records.push(record(query, MethodName::RerankOnRrfQ1, b.then_some(1)));
        }
        let family_of_two = significance_table(
            &records,
            MethodName::Baseline,
            &[MethodName::RrfQ1Q2, MethodName::RerankOnRrfQ1],
            3,
        )
        .unwrap();
        let family_of_one =
            significance_table(&records, MethodName::Baseline, &[MethodName::RrfQ1Q2], 3).unwrap();
        assert!((family_of_two[0].p_adjusted - 0.25).abs() < 1e-12);
        assert!((family_of_one[0].p_adjusted - 0.125).abs() < 1e-12);
    }

    fn ranked(ids: &[&str]) -> RankedList {
        let scored = ids
            .iter()
            .enumerate()
            .map(|(i, kb)| (ChunkId::new(kb, 0).unwrap(), (ids.len() - i) as f64))
            .collect();
        RankedList::from_scores("q", Stage::Rerank, scored).unwrap()
    }

    #[test]
    fn overlap_matches_direct_set_arithmetic() {
        let entry = overlap_diagnostics(&ranked(&["A", "B", "C"]), &ranked(&["B", "D"]), 10);
        assert_eq!(entry.overlap, 1);
        assert_eq!(entry.union, 4);
        assert!((entry.jaccard - 0.25).abs() < 1e-15);
        assert!((entry.uniq - 2.5).abs() < 1e-15);
    }

    #[test]
    fn identical_lists_have_jaccard_one() {
        let entry = overlap_diagnostics(&ranked(&["A", "B"]), &ranked(&["A", "B"]), 10);
        assert_eq!(entry.jaccard, 1.0);
    }

    #[test]
    fn disjoint_lists_have_jaccard_zero() {
        let entry = overlap_diagnostics(&ranked(&["A", "B"]), &ranked(&["C", "D"]), 10);
        assert_eq!(entry.jaccard, 0.0);
        assert_eq!(entry.union, 4);
    }

    #[test]
    fn empty_lists_yield_defined_zeroes() {
        let empty = RankedList::empty("q", Stage::Rerank);
        let entry = overlap_diagnostics(&empty, &empty, 10);
        assert_eq!(entry, OverlapEntry { overlap: 0, union: 0, jaccard: 0.0, uniq: 0.0 });
    }

    #[test]
    fn overlap_counts_sources_not_chunks() {
        // Two distinct chunks of KB1 collapse to one source.
        let q1 = {
            let scored = vec![
                (ChunkId::new("KB1", 0).unwrap(), 2.0),
                (ChunkId::new("KB1", 1).unwrap(), 1.0),
            ];
            RankedList::from_scores("q", Stage::Rerank, scored).unwrap()
        };
        let entry = overlap_diagnostics(&q1, &ranked(&["KB1"]), 10);
        assert_eq!(entry.overlap, 1);
        assert_eq!(entry.union, 1);
        assert_eq!(entry.jaccard, 1.0);
    }

    #[test]
    fn aggregation_averages_per_query_values() {
        let entries = vec![
            OverlapEntry { overlap: 1, union: 4, jaccard: 0.25, uniq: 2.5 },
            OverlapEntry { overlap: 2, union: 2, jaccard: 1.0, uniq: 2.0 },
        ];
        let stats = OverlapStats::aggregate(&entries);
        assert_eq!(stats.n, 2);
        assert!((stats.mean_overlap - 1.5).abs() < 1e-15);
        assert!((stats.mean_jaccard - 0.625).abs() < 1e-15);
        assert!((stats.mean_union - 3.0).abs() < 1e-15);
        assert!((stats.mean_uniq - 2.25).abs() < 1e-15);
    }
}
