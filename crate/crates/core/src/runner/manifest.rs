use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregationStrategy;
use crate::backend::BackendConfig;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRef {
    pub version: String,
    pub sha256: String,
    /// How the prompt ends, i.e. where generation starts.
    pub completion_point: String,
}

/// Everything needed to reproduce or resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub fixture: FixtureRef,
    pub n: usize,
    pub backend: BackendConfig,
    /// `"redacted"` when a bearer token was configured, else `"none"`.
    pub api_key: String,
    /// Worker `w` uses `seeds[w - 1]`.
    pub seeds: Vec<u64>,
    pub aggregation: AggregationStrategy,
    pub even_median: String,
    pub prompt: PromptRef,
    pub started_at: DateTime<Utc>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
}

impl RunManifest {
    /// Lists every field that prevents resuming `self` with `requested`.
    pub(crate) fn resume_conflicts(&self, requested: &RunManifest) -> Vec<String> {
        let mut conflicts = Vec::new();
        let mut check = |name: &str, ok: bool, was: String, now: String| {
            if !ok {
                conflicts.push(format!("{name}: run has {was}, requested {now}"));
            }
        };
        check(
            "format_version",
            self.format_version == requested.format_version,
            self.format_version.to_string(),
            requested.format_version.to_string(),
        );
        check(
            "fixture hash",
            self.fixture.sha256 == requested.fixture.sha256,
            self.fixture.sha256.clone(),
            requested.fixture.sha256.clone(),
        );
        check(
            "prompt template hash",
            self.prompt.sha256 == requested.prompt.sha256,
            self.prompt.sha256.clone(),
            requested.prompt.sha256.clone(),
        );
        check("seeds", self.seeds == requested.seeds, format!("{:?}", self.seeds), format!("{:?}", requested.seeds));
        check(
            "aggregation",
            self.aggregation == requested.aggregation,
            self.aggregation.to_string(),
            requested.aggregation.to_string(),
        );
        check(
            "backend",
            self.backend.kind == requested.backend.kind && self.backend.model_name == requested.backend.model_name,
            format!("{:?}/{}", self.backend.kind, self.backend.model_name),
            format!("{:?}/{}", requested.backend.kind, requested.backend.model_name),
        );
        check(
            "mock noise",
            self.backend.noise == requested.backend.noise,
            format!("{:?}", self.backend.noise),
            format!("{:?}", requested.backend.noise),
        );
        conflicts
    }
}

/// Progress marker, rewritten after every completed sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub completed: usize,
    pub last_sample_id: Option<String>,
    /// Accumulated wall-clock time spent waiting on inference batches.
    pub wall_clock_seconds: f64,
}

/// Scored summary of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub aggregation: AggregationStrategy,
    pub k: usize,
    pub fixture_sha256: String,
    pub metrics: MetricsReport,
    /// Parallel wall clock per review, for comparison with `mean_latency`
    /// (which sums worker calls).
    #[serde(default)]
    pub wall_clock_per_review: Option<f64>,
}

impl RunReport {
    pub fn ensemble_label(&self) -> &'static str {
        if self.aggregation.is_ensemble() && self.k > 1 {
            "adopted"
        } else {
            "-"
        }
    }

    pub fn render_table(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.metrics;
        writeln!(f, "{:<32} {:>9} {:>7} {:>7} {:>10}", "Model", "Ensemble", "RMSE", "Acc.", "Time (s)")?;
        writeln!(
            f,
            "{:<32} {:>9} {:>7.3} {:>7.3} {:>10.3}",
            self.model,
            self.ensemble_label(),
            m.rmse,
            m.accuracy,
            m.mean_latency
        )?;
        writeln!(f)?;
        writeln!(f, "aggregation: {} over {} worker(s)", self.aggregation, self.k)?;
        writeln!(f, "scored: {}  unscored (no valid vote): {}", m.n_scored, m.n_unscored)?;
        if let Some(w) = self.wall_clock_per_review {
            writeln!(f, "wall clock per review: {w:.3} s")?;
        }
        writeln!(f, "fixture sha256: {}", self.fixture_sha256)
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), line: 1, source })
}

/// Writes through a temporary file and renames, so readers never observe
/// a half-written document.
pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("run metadata serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
