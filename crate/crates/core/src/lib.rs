//! Seed-varied ensemble inference for ordinal sentiment labels.
//!
//! A prompt is sent to a language-model backend once per worker, each worker
//! distinguished only by its sampling seed. The per-worker outputs are parsed
//! into star labels, invalid outputs are dropped, and the remaining votes are
//! combined with a median. The crate also covers fixture preparation from
//! Yelp-style review dumps, scoring (RMSE / concordance / latency), lift
//! tables, and an exact order-statistics model of the ensemble benefit.

pub mod aggregate;
pub mod backend;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod parse;
pub mod prompt;
pub mod runner;
pub mod types;

pub use aggregate::{aggregate, aggregate_majority, aggregate_median, AggregationStrategy};
pub use backend::{
    build_backend, Backend, BackendConfig, BackendError, BackendKind, Completion, HttpBackend, InferRequest,
    MockBackend, NoiseModel,
};
pub use error::{Error, Result};
pub use eval::{
    chance_baseline, exact_ensemble_rmse, lift, score, EnsembleRmse, ExpectedError, LabelHistogram, LatencyRule,
    LiftMetric, LiftRow, MetricsReport,
};
pub use ingest::{FilterSpec, Fixture, FixtureStats, RawBusiness, RawReview};
pub use parse::{parse_label, ParseOutcome, ParseReason};
pub use prompt::PromptTemplate;
pub use runner::{RunConfig, RunManifest, RunReport};
pub use types::{EnsembleResult, Label, ReviewSample, WorkerPrediction};
