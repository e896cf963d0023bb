//! Retrieval-fusion evaluation for RAG pipelines.
//!
//! The pipeline mirrors a production retrieval stack: hybrid (BM25 +
//! dense) retrieval for the original query and one LLM reformulation,
//! independent per-query reranking, chunk-level reciprocal rank fusion,
//! optional post-fusion reranking, and truncation to a fixed top-K
//! context. Evaluation is KB-article-level (Top-1 / Top-3 / Hit@K), with
//! paired exact significance testing, overlap diagnostics, and per-stage
//! latency accounting.
//!
//! Modules follow the pipeline:
//!
//! * [`corpus`] — articles, chunking, chunk-aware identifiers, datasets
//! * [`index`] — sparse/dense indexes, metadata filtering, hybrid retrieval
//! * [`rewrite`] — query reformulation prompts, service client, replay cache
//! * [`rank`] — reranking, reciprocal rank fusion, the five-method runner
//! * [`eval`] — KB-level hit metrics
//! * [`stats`] — McNemar exact test, BH adjustment, overlap measures
//! * [`harness`] — configuration, retries, orchestration, report emission

pub mod corpus;
pub mod eval;
pub mod harness;
pub mod index;
pub mod rank;
pub mod rewrite;
pub mod service;
pub mod stats;
