//! Report emission. All files for a run are staged in a scratch
//! directory and swapped into place at the end, so an interrupted run
//! leaves either no artifact or the complete previous one — never a mix.
//!
//! Numeric formatting is fixed: fractions at 4 decimals, percentages at
//! 2, seconds at 2 except values under 0.1 s which keep 3 for
//! sub-second stages. Re-emitting the same artifact always produces
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::eval::{format_fraction, format_percent};
use crate::rank::MethodName;

use super::{HarnessError, LatencySummary, RunArtifact};

const SUMMARY_CSV: &str = "summary.csv";
const SUMMARY_TXT: &str = "summary.txt";
const SIGNIFICANCE_CSV: &str = "significance.csv";
const OVERLAP_CSV: &str = "overlap.csv";
const LATENCY_CSV: &str = "latency.csv";
const SKIPS_LOG: &str = "skips.log";
const ARTIFACT_JSONL: &str = "artifact.jsonl";
const CONFIG_SNAPSHOT: &str = "config.snapshot";

/// Seconds at 2 decimals, except sub-0.1 values at 3.
fn format_seconds(value: f64) -> String {
    if value >= 0.1 {
        format!("{value:.2}")
    } else {
        format!("{value:.3}")
    }
}

/// Write every report file for `artifact` into `out_dir`, atomically.
/// Returns the paths of the emitted files.
pub fn emit_report(artifact: &RunArtifact, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let files = [
        (SUMMARY_CSV, summary_csv(artifact)),
        (SUMMARY_TXT, summary_txt(artifact)),
        (SIGNIFICANCE_CSV, significance_csv(artifact)),
        (OVERLAP_CSV, overlap_csv(artifact)),
        (LATENCY_CSV, latency_csv(&artifact.latency)),
        (SKIPS_LOG, skips_log(artifact)),
        (ARTIFACT_JSONL, artifact_jsonl(artifact)),
        (CONFIG_SNAPSHOT, artifact.config_snapshot.clone()),
    ];

    let staging = staging_dir(out_dir)?;
    let io_err = |path: &Path, source: std::io::Error| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
    for (name, content) in &files {
        let path = staging.join(name);
        std::fs::write(&path, content).map_err(|e| io_err(&path, e))?;
    }
    swap_into_place(&staging, out_dir)?;
    Ok(files.iter().map(|(name, _)| out_dir.join(name)).collect())
}

fn staging_dir(out_dir: &Path) -> Result<PathBuf, HarnessError> {
    let name = out_dir
        .file_name()
        .ok_or_else(|| HarnessError::Config(format!("bad output directory {}", out_dir.display())))?
        .to_string_lossy()
        .to_string();
    let parent = out_dir.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(parent.join(format!(".{name}.staging.{}", std::process::id())))
}

/// Rename the staged directory over the target. A previous artifact is
/// moved aside first and deleted only after the new one is in place.
fn swap_into_place(staging: &Path, out_dir: &Path) -> Result<(), HarnessError> {
    let io_err = |path: &Path, source: std::io::Error| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = out_dir.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    if out_dir.exists() {
        let previous = staging.with_extension("previous");
        std::fs::rename(out_dir, &previous).map_err(|e| io_err(out_dir, e))?;
        std::fs::rename(staging, out_dir).map_err(|e| io_err(staging, e))?;
        std::fs::remove_dir_all(&previous).map_err(|e| io_err(&previous, e))?;
    } else {
        std::fs::rename(staging, out_dir).map_err(|e| io_err(staging, e))?;
    }
    Ok(())
}

fn summary_csv(artifact: &RunArtifact) -> String {
    let k = artifact.k;
    let mut out = format!("method,top1,top3,hit@{k},top1_pct,top3_pct,hit@{k}_pct\n");
    for method in MethodName::ALL {
        if artifact.summary.n == 0 {
            writeln!(out, "{method},NA,NA,NA,NA,NA,NA").expect("string write");
            continue;
        }
        let m = artifact.summary.get(method);
        writeln!(
            out,
            "{method},{},{},{},{},{},{}",
            format_fraction(m.top1),
            format_fraction(m.top3),
            format_fraction(m.hit_k),
            format_percent(m.top1),
            format_percent(m.top3),
            format_percent(m.hit_k),
        )
        .expect("string write");
    }
    out
}

fn summary_txt(artifact: &RunArtifact) -> String {
    let skipped = artifact.skips().count();
    let mut out = format!(
        "prompt {} | N = {} evaluated queries ({} skipped) | K = {}\n\n",
        artifact.prompt_type,
        artifact.summary.n,
        skipped,
        artifact.k
    );
    writeln!(
        out,
        "{:<18} {:>8} {:>8} {:>8}",
        "method",
        "Top-1",
        "Top-3",
        format!("Hit@{}", artifact.k)
    )
    .expect("string write");
    for method in MethodName::ALL {
        if artifact.summary.n == 0 {
            writeln!(out, "{:<18} {:>8} {:>8} {:>8}", method.as_str(), "NA", "NA", "NA")
                .expect("string write");
            continue;
        }
        let m = artifact.summary.get(method);
        writeln!(
            out,
            "{:<18} {:>7}% {:>7}% {:>7}%",
            method.as_str(),
            format_percent(m.top1),
            format_percent(m.top3),
            format_percent(m.hit_k),
        )
        .expect("string write");
    }
    out
}

fn significance_csv(artifact: &RunArtifact) -> String {
    let depth = artifact.significance_depth;
    let mut out = format!("prompt,method,top{depth},delta_pp,p,p_adj\n");
    for row in &artifact.significance {
        writeln!(
            out,
            "{},{},{},{:+.2},{:.4},{:.4}",
            artifact.prompt_type,
            row.method,
            format_percent(row.hit_rate),
            row.delta_pp,
            row.p_raw,
            row.p_adjusted,
        )
        .expect("string write");
    }
    out
}

fn overlap_csv(artifact: &RunArtifact) -> String {
    let k = artifact.k;
    let mut out = format!("prompt,overlap@{k},jaccard@{k},union@{k},uniq@{k}\n");
    if artifact.overlap.n == 0 {
        writeln!(out, "{},NA,NA,NA,NA", artifact.prompt_type).expect("string write");
        return out;
    }
    writeln!(
        out,
        "{},{:.2},{},{:.2},{:.2}",
        artifact.prompt_type,
        artifact.overlap.mean_overlap,
        format_fraction(artifact.overlap.mean_jaccard),
        artifact.overlap.mean_union,
        artifact.overlap.mean_uniq,
    )
    .expect("string write");
    out
}

fn latency_csv(latency: &LatencySummary) -> String {
    let mut out = String::from("stage,mean_s,p50_s,p95_s,p99_s\n");
    for (stage, summary) in &latency.stages {
        if latency.n == 0 {
            writeln!(out, "{},NA,NA,NA,NA", stage.label()).expect("string write");
            continue;
        }
        writeln!(
            out,
            "{},{},{},{},{}",
            stage.label(),
            format_seconds(summary.mean),
            format_seconds(summary.p50),
            format_seconds(summary.p95),
            format_seconds(summary.p99),
        )
        .expect("string write");
    }
    out
}

fn skips_log(artifact: &RunArtifact) -> String {
    let mut out = String::new();
    for skip in artifact.skips() {
        writeln!(
            out,
            "query_index={} stage={} attempts={} question={:?} cause={:?}",
            skip.query_index,
            skip.stage.as_str(),
            skip.attempts,
            skip.question,
            skip.cause,
        )
        .expect("string write");
    }
    out
}

fn artifact_jsonl(artifact: &RunArtifact) -> String {
    let mut out = String::new();
    for record in &artifact.records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{
        assemble_artifact, QueryLatency, QueryLogRecord, QueryOutcome, SignificanceConfig,
        SkipEntry, SkipStage,
    };
    use crate::rewrite::PromptType;
    use crate::stats::OverlapEntry;

    fn outcome(query_index: usize, hit: bool) -> QueryLogRecord {
        let hits = MethodName::ALL
            .into_iter()
            .map(|method| crate::eval::HitRecord {
                query_index,
                method,
                hit_rank: hit.then_some(1),
                hit1: hit,
                hit3: hit,
                hit_k: hit,
            })
            .collect();
        QueryLogRecord::Result(Box::new(QueryOutcome {
            query_index,
            question: format!("q{query_index}"),
            q2: format!("rewrite {query_index}"),
            methods: MethodName::ALL.into_iter().map(|m| (m, Vec::new())).collect(),
            retrieval_slots: Vec::new(),
            fusion_input_stages: vec![crate::index::Stage::Rerank; 2],
            hits,
            overlap: OverlapEntry { overlap: 1, union: 4, jaccard: 0.25, uniq: 2.5 },
            latency: QueryLatency {
                q2_generation: 0.89,
                retrieval_q1: 54.6,
                retrieval_combined: 65.98,
                rrf: 0.012,
                rerank: 0.26,
            },
        }))
    }

    fn artifact(records: Vec<QueryLogRecord>) -> RunArtifact {
        assemble_artifact(
            "k = 10\n".to_string(),
            PromptType::P1,
            10,
            &SignificanceConfig::default(),
            records,
        )
        .unwrap()
    }

    #[test]
    fn seconds_formatting_matches_stage_granularity() {
        assert_eq!(format_seconds(54.6), "54.60");
        assert_eq!(format_seconds(0.89), "0.89");
        assert_eq!(format_seconds(0.26), "0.26");
        assert_eq!(format_seconds(0.012), "0.012");
    }

    #[test]
    fn emitted_files_cover_the_full_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let artifact = artifact(vec![outcome(0, true), outcome(1, false)]);
        let files = emit_report(&artifact, &out).unwrap();
        assert_eq!(files.len(), 8);
        for file in &files {
            assert!(file.exists(), "{} missing", file.display());
        }
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(summary.starts_with("method,top1,top3,hit@10"));
        assert!(summary.contains("baseline,0.5000,0.5000,0.5000,50.00,50.00,50.00"));
    }

    #[test]
    fn latency_rows_follow_the_fixed_stage_order() {
        let artifact = artifact(vec![outcome(0, true)]);
        let csv = latency_csv(&artifact.latency);
        let stages: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(
            stages,
            vec![
                "fusion_question_generation",
                "retrieval_q1",
                "retrieval_q1_q2_combined",
                "rrf",
                "rerank"
            ]
        );
        assert!(csv.contains("rrf,0.012,0.012,0.012,0.012"));
        assert!(csv.contains("retrieval_q1,54.60,54.60,54.60,54.60"));
    }

    #[test]
    fn re_emitting_the_same_artifact_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let artifact = artifact(vec![outcome(0, true), outcome(1, false)]);
        emit_report(&artifact, &out).unwrap();
        let first: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                let bytes = std::fs::read(&p).unwrap();
                (p, bytes)
            })
            .collect();
        emit_report(&artifact, &out).unwrap();
        for (path, bytes) in first {
            assert_eq!(std::fs::read(&path).unwrap(), bytes, "{} changed", path.display());
        }
    }

    #[test]
    fn empty_run_emits_explicit_markers() {
        let artifact = artifact(Vec::new());
        assert!(summary_csv(&artifact).contains("baseline,NA,NA,NA"));
        assert!(summary_txt(&artifact).contains("N = 0"));
        assert_eq!(significance_csv(&artifact).lines().count(), 1);
        assert!(overlap_csv(&artifact).contains("p1,NA,NA,NA,NA"));
        assert!(latency_csv(&artifact.latency).contains("rrf,NA"));
    }

    #[test]
    fn skip_entries_surface_in_the_log_not_the_tables() {
        let skip = QueryLogRecord::Skip(SkipEntry {
            query_index: 1,
            question: "broken".to_string(),
            stage: SkipStage::Retrieval,
            attempts: 4,
            cause: "boom".to_string(),
        });
        let artifact = artifact(vec![outcome(0, true), skip]);
        assert_eq!(artifact.summary.n, 1);
        let log = skips_log(&artifact);
        assert!(log.contains("query_index=1 stage=retrieval attempts=4"));
        let txt = summary_txt(&artifact);
        assert!(txt.contains("N = 1 evaluated queries (1 skipped)"));
    }
}
