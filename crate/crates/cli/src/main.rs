//! Command-line front end for the retrieval-fusion evaluation harness.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fusebench_core::harness::{
    self, build_retriever, emit_report, generate_rewrites, load_artifact, run_experiment,
    RunConfig,
};
use fusebench_core::rewrite::PromptType;

#[derive(Parser)]
#[command(name = "fusebench", version, about = "Retrieval-fusion evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the prompt type (p1, p2, or p3).
    #[arg(long)]
    prompt: Option<PromptType>,
    /// Override the final context depth K.
    #[arg(long)]
    k: Option<usize>,
    /// Force replay mode: use cached reformulations, no rewrite calls.
    #[arg(long)]
    replay: bool,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(prompt) = self.prompt {
            cfg.prompt_type = prompt;
        }
        if let Some(k) = self.k {
            cfg.k = k;
            cfg.rerank_budget = cfg.rerank_budget.min(k.max(1));
        }
        if self.replay {
            cfg.replay = true;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate and summarize the corpus and query dataset.
    Ingest(ConfigArgs),
    /// Build the sparse and dense indexes and print their statistics.
    Index(ConfigArgs),
    /// Generate (or verify) the Q2 reformulation for every query.
    Rewrite(ConfigArgs),
    /// Run the full pipeline and emit the report.
    Run(ConfigArgs),
    /// Recompute and re-emit tables from a stored artifact directory.
    Report {
        /// Artifact directory produced by `run`.
        #[arg(long)]
        artifact: PathBuf,
        /// Where to write the regenerated report (defaults to the
        /// artifact directory itself).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Ingest(args) => ingest(&args.load()?),
        Command::Index(args) => index(&args.load()?),
        Command::Rewrite(args) => rewrite(&args.load()?),
        Command::Run(args) => run(&args.load()?),
        Command::Report { artifact, out } => report(&artifact, out.as_deref()),
    }
}

fn ingest(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (articles, queries, chunks) = harness::ingest(cfg)?;
    let with_replay = queries
        .iter()
        .filter(|q| {
            q.q2.as_ref()
                .is_some_and(|m| m.contains_key(cfg.prompt_type.as_str()))
        })
        .count();
    println!("articles: {}", articles.len());
    println!("queries: {} ({} with cached {} rewrites)", queries.len(), with_replay, cfg.prompt_type);
    println!(
        "chunks: {} (chunk_size={} tokens, overlap={})",
        chunks.len(),
        cfg.chunk_size,
        cfg.chunk_overlap
    );
    Ok(())
}

fn index(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (_, _, chunks) = harness::ingest(cfg)?;
    let retriever = build_retriever(cfg, &chunks)?;
    println!(
        "sparse index: {} chunks, avgdl {:.2}, k1={}, b={}",
        retriever.sparse().len(),
        retriever.sparse().avgdl(),
        cfg.bm25_k1,
        cfg.bm25_b
    );
    println!(
        "dense index: {} vectors, dim {}, embedder {}",
        retriever.dense().len(),
        retriever.dense().dim(),
        retriever.dense().embedder_descriptor()
    );
    Ok(())
}

fn rewrite(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let run = generate_rewrites(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let out_path = cfg.out_dir.join("rewrites.jsonl");
    harness::write_queries(&run.queries, &out_path)?;
    println!(
        "rewrites: {} generated, {} already cached, {} skipped",
        run.generated,
        run.cache_hits,
        run.skips.len()
    );
    for skip in &run.skips {
        eprintln!(
            "skipped query {} at {}: {}",
            skip.query_index,
            skip.stage.as_str(),
            skip.cause
        );
    }
    println!("replay dataset written to {}", out_path.display());
    if !run.skips.is_empty() {
        bail!("{} query rewrite(s) failed", run.skips.len());
    }
    Ok(())
}

fn run(cfg: &RunConfig) -> Result<()> {
    let artifact = run_experiment(cfg)?;
    let files = emit_report(&artifact, &cfg.out_dir)?;
    println!(
        "prompt {} | evaluated {} queries, skipped {}",
        artifact.prompt_type,
        artifact.n(),
        artifact.skips().count()
    );
    for method in fusebench_core::rank::MethodName::ALL {
        if artifact.summary.n == 0 {
            break;
        }
        let m = artifact.summary.get(method);
        println!(
            "  {:<18} top1 {:>6.2}%  top3 {:>6.2}%  hit@{} {:>6.2}%",
            method.as_str(),
            m.top1 * 100.0,
            m.top3 * 100.0,
            artifact.k,
            m.hit_k * 100.0
        );
    }
    println!("report written to {}", cfg.out_dir.display());
    for file in files {
        println!("  {}", file.display());
    }
    Ok(())
}

fn report(artifact_dir: &PathBuf, out: Option<&std::path::Path>) -> Result<()> {
    let artifact = load_artifact(artifact_dir)?;
    let target = out.unwrap_or(artifact_dir.as_path());
    emit_report(&artifact, target)?;
    println!(
        "recomputed tables for {} queries ({} skipped) into {}",
        artifact.n(),
        artifact.skips().count(),
        target.display()
    );
    Ok(())
}
