//! Layer-wise evaluation of hallucination and creativity for early-exit decoding.
//!
//! The engine samples answers from every decoder layer of a model (through a
//! [`provider::Provider`]), judges each answer against the gold answers of an
//! open-domain QA question, clusters the correct ones by embedding similarity,
//! and combines the per-layer error rate with the normalized cluster count into
//! a balanced score used to pick an early-exit layer.
//!
//! Pipeline stages map onto modules:
//!
//! - [`dataset`]: question files, answer-count filtering, seeded subsampling
//! - [`provider`]: generation / embedding / P(True) backends (sidecar, replay, simulator)
//! - [`simgen`]: deterministic synthetic layer model used for offline runs
//! - [`judge`]: containment-based correctness labels
//! - [`cluster`]: greedy thresholded cosine clustering of correct answers
//! - [`scoring`]: per-layer scores, min-max normalization, layer selection
//! - [`confidence`]: P(True) self-evaluation per layer
//! - [`report`]: score tables, plot series, run summaries
//! - [`config`] and [`pipeline`]: run configuration and the end-to-end driver

pub mod cluster;
pub mod config;
pub mod confidence;
pub mod dataset;
pub mod judge;
pub mod pipeline;
pub mod provider;
pub mod report;
pub mod scoring;
pub mod simgen;
mod util;

pub use cluster::{ClusterResult, EmbeddingVector};
pub use config::RunConfig;
pub use dataset::{Corpus, QuestionRecord};
pub use provider::{GenerationRequest, LayerResponse, ModelInfo, Provider};
pub use report::RunReport;
pub use scoring::{LayerScore, RunScores, ScoreWeights};
