//! Plan-conditioned retrieval and generation engine for artwork question
//! answering.
//!
//! Given an artwork record and a question, the engine produces an explicit
//! reasoning plan, performs plan-conditioned two-stage retrieval over a typed
//! art knowledge graph, generates a plan-constrained step-wise answer, and
//! evaluates runs against benchmark datasets with lexical metrics and a
//! judged rubric. Every run leaves a complete trace, and with mock backends
//! the whole pipeline is a pure function of its inputs and a seed.
//!
//! Module map:
//! - [`graph`]: the typed knowledge graph with dedup and neighborhoods
//! - [`ingest`]: chunking, extraction, and corpus ingestion
//! - [`index`]: exact top-k cosine retrieval over node embeddings
//! - [`planner`]: reasoning plans and retrieval intents
//! - [`retrieval`]: coarse retrieval, reranking, score fusion, context
//! - [`generation`]: pipeline modes, answers, run records, batching
//! - [`backend`]: model access (mock, remote, cached)
//! - [`benchmark`]: dataset model, validation, statistics, construction
//! - [`eval`]: BLEU/ROUGE, the judge protocol, report aggregation
//! - [`config`]: the engine configuration file

pub mod backend;
pub mod benchmark;
pub mod config;
pub mod error;
pub mod eval;
pub mod generation;
pub mod graph;
pub mod index;
pub mod ingest;
pub mod planner;
pub mod retrieval;

pub use error::{AmarError, ErrorCategory, Result};
