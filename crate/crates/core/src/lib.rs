//! Multi-view graph representation learning.
//!
//! The pipeline turns raw user interaction logs into per-view item graphs,
//! trains one embedding table per view with skip-gram objectives plus
//! cross-view alignment tasks, balances the task losses with learned
//! homoscedastic uncertainty weights, and evaluates the result with
//! top-k retrieval metrics. A separate metric-learning stage reranks
//! neighbors for category diversity.
//!
//! Modules are layered bottom-up:
//!
//! * [`ingest`]: event parsing, cleaning, sessionization.
//! * [`graph`]: per-view vocabularies, co-occurrence graphs, cross-view links.
//! * [`sampler`]: skip-gram pair enumeration, negative sampling, batch streams.
//! * [`training`]: embedding tables, losses, uncertainty weighting, optimizer,
//!   and the round-robin multi-task loop.
//! * [`eval`]: top-k retrieval and recommendation metrics.
//! * [`diversity`]: Mahalanobis metric learning and novelty evaluation.
//! * [`checkpoint`]: text and binary model serialization.
//! * [`config`]: flat key-value run configuration.
//! * [`pipeline`]: one function per CLI subcommand tying the stages together.

pub mod checkpoint;
pub mod config;
pub mod diversity;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod sampler;
pub mod training;
pub mod types;

pub use error::{Error, Result};
