//! Samples, labels, votes and per-sample ensemble results.
//!
//! Every type serializes to a single JSON object so that fixtures and run
//! outputs can be stored as JSON lines.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::parse::ParseReason;

/// A star rating in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Label(u8);

impl Label {
    pub const MIN: Label = Label(1);
    pub const MAX: Label = Label(5);

    pub fn new(value: i64) -> Result<Self, Error> {
        if (1..=5).contains(&value) {
            Ok(Label(value as u8))
        } else {
            Err(Error::InvalidLabel(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// All labels in ascending order.
    pub fn all() -> impl Iterator<Item = Label> + Clone {
        (1..=5).map(Label)
    }

    /// Zero-based position, handy for indexing `[_; 5]` tables.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub(crate) fn from_index(index: usize) -> Label {
        debug_assert!(index < 5);
        Label(index as u8 + 1)
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One labeled review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSample {
    pub sample_id: String,
    pub user_id: String,
    pub business_id: String,
    pub text: String,
    pub stars: Label,
    pub posted_at: DateTime<Utc>,
}

/// One worker's output for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerPrediction {
    pub sample_id: String,
    /// 1-based worker index; worker `w` uses the `w`-th configured seed.
    pub worker_id: u32,
    pub seed: u64,
    /// Generated continuation, untrimmed.
    pub raw_output: String,
    /// `None` when the output did not parse to a label.
    pub parsed: Option<Label>,
    pub reason: ParseReason,
    /// Seconds spent in the backend call.
    pub latency: f64,
}

impl WorkerPrediction {
    pub fn is_valid(&self) -> bool {
        self.parsed.is_some()
    }
}

/// All votes for one sample and their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub sample_id: String,
    pub votes: Vec<WorkerPrediction>,
    /// Absent only when no vote is valid.
    pub aggregated: Option<Label>,
    pub valid_count: usize,
}

impl EnsembleResult {
    pub fn valid_votes(&self) -> impl Iterator<Item = Label> + '_ {
        self.votes.iter().filter_map(|v| v.parsed)
    }

    /// Sum of the worker latencies, i.e. the sequential cost of the sample.
    pub fn total_latency(&self) -> f64 {
        self.votes.iter().map(|v| v.latency).sum()
    }
}
