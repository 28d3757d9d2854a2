//! Experiment orchestration: fan out K seeded worker calls per sample,
//! aggregate, persist, score.
//!
//! A run directory holds `manifest.json`, `predictions.jsonl` (one
//! [`EnsembleResult`] per line, in fixture order), `state.json`,
//! `report.json` and `report.txt`. Re-running into an existing directory
//! resumes after the last complete predictions line.

mod compare;
mod manifest;
mod simulate;

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::aggregate::{aggregate, AggregationStrategy};
use crate::backend::{Backend, BackendConfig, InferRequest, API_KEY_ENV};
use crate::error::{Error, Result};
use crate::eval::{chance_baseline, score, LabelHistogram, LatencyRule};
use crate::ingest::Fixture;
use crate::parse::parse_label;
use crate::prompt::{PromptTemplate, TEMPLATE_VERSION};
use crate::types::{EnsembleResult, WorkerPrediction};

pub use compare::{compare, compare_reports, render_lift_table, Comparison};
pub use manifest::{
    FixtureRef, PromptRef, RunManifest, RunReport, RunState, FORMAT_VERSION, MANIFEST_FILE, PREDICTIONS_FILE,
    REPORT_JSON, REPORT_TXT, STATE_FILE,
};
pub use simulate::{monte_carlo, render_simulation, simulate, McEstimate, SimulationRow};

use manifest::{read_json, write_atomic, write_json_atomic};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub fixture: PathBuf,
    pub backend: BackendConfig,
    /// One seed per worker; worker ids follow this order.
    pub seeds: Vec<u64>,
    pub aggregation: AggregationStrategy,
    /// Maximum number of concurrent backend calls.
    pub concurrency: usize,
    pub out_dir: PathBuf,
    /// Fail after scoring if any sample has no valid vote.
    pub strict: bool,
}

impl RunConfig {
    pub fn new(fixture: impl Into<PathBuf>, backend: BackendConfig, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            fixture: fixture.into(),
            backend,
            seeds: DEFAULT_SEEDS.to_vec(),
            aggregation: AggregationStrategy::Median,
            concurrency: 5,
            out_dir: out_dir.into(),
            strict: false,
        }
    }

    pub fn k(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::validation("at least one seed is required"));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::validation(format!("seeds must be distinct: {:?}", self.seeds)));
        }
        if self.concurrency == 0 {
            return Err(Error::validation("concurrency must be at least 1"));
        }
        self.aggregation.validate(self.k())?;
        self.backend.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Samples already complete when this invocation started.
    pub resumed_from: usize,
    /// Samples completed by this invocation.
    pub processed: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads the complete prefix of a predictions file, dropping a trailing
/// partial line, and checks it against the fixture order.
fn load_completed(path: &Path, fixture: &Fixture, k: usize) -> Result<Vec<EnsembleResult>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete_len < bytes.len() {
        let file = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
        file.set_len(complete_len as u64).map_err(|e| Error::io(path, e))?;
    }
    let mut results = Vec::new();
    for (i, line) in bytes[..complete_len].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let result: EnsembleResult = serde_json::from_slice(line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        let expected = fixture.test_set.get(results.len()).ok_or_else(|| {
            Error::ResumeMismatch(format!("{} has more lines than the fixture has samples", path.display()))
        })?;
        if result.sample_id != expected.sample_id {
            return Err(Error::ResumeMismatch(format!(
                "line {} holds sample '{}', fixture order expects '{}'",
                i + 1,
                result.sample_id,
                expected.sample_id
            )));
        }
        let worker_ids_ok = result.votes.iter().enumerate().all(|(w, v)| v.worker_id as usize == w + 1);
        if result.votes.len() != k || !worker_ids_ok {
            return Err(Error::ResumeMismatch(format!(
                "line {} has {} votes, expected workers 1..={k}",
                i + 1,
                result.votes.len()
            )));
        }
        results.push(result);
    }
    Ok(results)
}

fn build_manifest(config: &RunConfig, fixture_path: &Path, fixture_sha: String, n: usize) -> RunManifest {
    let template = PromptTemplate::builtin();
    let api_key_set = std::env::var(API_KEY_ENV).is_ok_and(|k| !k.is_empty());
    RunManifest {
        format_version: FORMAT_VERSION,
        fixture: FixtureRef { path: fixture_path.display().to_string(), sha256: fixture_sha },
        n,
        backend: config.backend.clone(),
        api_key: if api_key_set && config.backend.kind == crate::backend::BackendKind::Http {
            "redacted".into()
        } else {
            "none".into()
        },
        seeds: config.seeds.clone(),
        aggregation: config.aggregation,
        even_median: "lower".into(),
        prompt: PromptRef {
            version: TEMPLATE_VERSION.into(),
            sha256: template.sha256(),
            completion_point: "ends with \"Output: \" (trailing space, no newline)".into(),
        },
        started_at: Utc::now(),
        finished_at: None,
    }
}

/// Runs (or resumes) an experiment into `config.out_dir`.
///
/// Worker calls for up to `concurrency` samples run in parallel; results
/// are written in fixture order, one line per sample, flushed before the
/// next sample is recorded. On a backend failure the completed prefix is
/// kept and the error returned.
pub fn run(config: &RunConfig, backend: &dyn Backend) -> Result<RunOutcome> {
    config.validate()?;
    let fixture_path = fs::canonicalize(&config.fixture).map_err(|e| Error::io(&config.fixture, e))?;
    let fixture_bytes = fs::read(&fixture_path).map_err(|e| Error::io(&fixture_path, e))?;
    let fixture = Fixture::parse(fixture_bytes.as_slice(), &fixture_path)?;
    let fixture_sha = sha256_hex(&fixture_bytes);
    let template = PromptTemplate::builtin();
    let k = config.k();

    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let requested = build_manifest(config, &fixture_path, fixture_sha, fixture.len());
    let mut manifest = if manifest_path.exists() {
        let existing: RunManifest = read_json(&manifest_path)?;
        let conflicts = existing.resume_conflicts(&requested);
        if !conflicts.is_empty() {
            return Err(Error::ResumeMismatch(conflicts.join("; ")));
        }
        existing
    } else {
        write_json_atomic(&manifest_path, &requested)?;
        requested
    };

    let predictions_path = dir.join(PREDICTIONS_FILE);
    let state_path = dir.join(STATE_FILE);
    let mut results = load_completed(&predictions_path, &fixture, k)?;
    let resumed_from = results.len();
    let mut state = if state_path.exists() { read_json::<RunState>(&state_path)? } else { RunState::default() };
    state.completed = resumed_from;
    state.last_sample_id = results.last().map(|r| r.sample_id.clone());

    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&predictions_path)
        .map_err(|e| Error::io(&predictions_path, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))?;

    for batch in fixture.test_set[resumed_from..].chunks(config.concurrency) {
        let prompts =
            batch.iter().map(|target| template.render(&fixture.oneshot_example, target)).collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, usize)> = (0..batch.len()).flat_map(|i| (0..k).map(move |w| (i, w))).collect();
        let started = Instant::now();
        let completions: Vec<_> = pool.install(|| {
            jobs.par_iter()
                .map(|&(i, w)| {
                    backend.infer(&InferRequest { prompt: &prompts[i], seed: config.seeds[w], target: &batch[i] })
                })
                .collect()
        });
        state.wall_clock_seconds += started.elapsed().as_secs_f64();

        let mut completions = completions.into_iter();
        for target in batch {
            let mut votes = Vec::with_capacity(k);
            for (w, &seed) in config.seeds.iter().enumerate() {
                let completion = match completions.next().expect("one completion per job") {
                    Ok(c) => c,
                    Err(e) => {
                        write_json_atomic(&state_path, &state)?;
                        return Err(e.into());
                    }
                };
                let outcome = parse_label(&completion.raw_output);
                votes.push(WorkerPrediction {
                    sample_id: target.sample_id.clone(),
                    worker_id: w as u32 + 1,
                    seed,
                    raw_output: completion.raw_output,
                    parsed: outcome.parsed,
                    reason: outcome.reason,
                    latency: completion.latency,
                });
            }
            let result = aggregate(config.aggregation, votes)?;
            let mut line = serde_json::to_string(&result).expect("results serialize");
            line.push('\n');
            out.write_all(line.as_bytes()).and_then(|()| out.flush()).map_err(|e| Error::io(&predictions_path, e))?;
            results.push(result);
            state.completed = results.len();
            state.last_sample_id = Some(target.sample_id.clone());
            write_json_atomic(&state_path, &state)?;
        }
    }
    out.sync_all().map_err(|e| Error::io(&predictions_path, e))?;

    manifest.finished_at = Some(Utc::now());
    write_json_atomic(&manifest_path, &manifest)?;
    let report = build_report(&manifest, &fixture, &results, Some(&state))?;
    write_report(dir, &report)?;
    let processed = results.len() - resumed_from;
    if config.strict && report.metrics.n_unscored > 0 {
        return Err(Error::validation(format!(
            "strict mode: {} sample(s) had no valid vote",
            report.metrics.n_unscored
        )));
    }
    Ok(RunOutcome { report, resumed_from, processed })
}

fn build_report(
    manifest: &RunManifest,
    fixture: &Fixture,
    results: &[EnsembleResult],
    state: Option<&RunState>,
) -> Result<RunReport> {
    let metrics = score(results, &fixture.test_set, LatencyRule::from(manifest.aggregation))?;
    Ok(RunReport {
        model: manifest.backend.model_name.clone(),
        aggregation: manifest.aggregation,
        k: manifest.seeds.len(),
        fixture_sha256: manifest.fixture.sha256.clone(),
        metrics,
        wall_clock_per_review: state
            .filter(|s| s.completed > 0 && s.wall_clock_seconds > 0.0)
            .map(|s| s.wall_clock_seconds / s.completed as f64),
    })
}

fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    write_json_atomic(&dir.join(REPORT_JSON), report)?;
    write_atomic(&dir.join(REPORT_TXT), report.render_table().as_bytes())
}

/// Reads every line of a predictions file.
pub fn read_predictions(path: &Path) -> Result<Vec<EnsembleResult>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut results = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        results.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(results)
}

/// Re-scores a finished run directory and rewrites its report files.
pub fn evaluate(run_dir: &Path) -> Result<RunReport> {
    let manifest: RunManifest = read_json(&run_dir.join(MANIFEST_FILE))?;
    let fixture_path = Path::new(&manifest.fixture.path);
    let bytes = fs::read(fixture_path).map_err(|e| Error::io(fixture_path, e))?;
    let sha = sha256_hex(&bytes);
    if sha != manifest.fixture.sha256 {
        return Err(Error::ResumeMismatch(format!(
            "fixture {} changed since the run (manifest {}, now {sha})",
            fixture_path.display(),
            manifest.fixture.sha256
        )));
    }
    let fixture = Fixture::parse(bytes.as_slice(), fixture_path)?;
    let results = read_predictions(&run_dir.join(PREDICTIONS_FILE))?;
    let state_path = run_dir.join(STATE_FILE);
    let state = if state_path.exists() { Some(read_json::<RunState>(&state_path)?) } else { None };
    let report = build_report(&manifest, &fixture, &results, state.as_ref())?;
    write_report(run_dir, &report)?;
    Ok(report)
}

/// Scores the chance-level baseline on a fixture and writes its report
/// into `out_dir`, so it can serve as either side of [`compare`].
pub fn chance_report(fixture: &Path, histogram: &LabelHistogram, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let bytes = fs::read(fixture).map_err(|e| Error::io(fixture, e))?;
    let parsed = Fixture::parse(bytes.as_slice(), fixture)?;
    let report = RunReport {
        model: "chance".into(),
        aggregation: AggregationStrategy::Single(1),
        k: 1,
        fixture_sha256: sha256_hex(&bytes),
        metrics: chance_baseline(histogram, &parsed.test_set, seed)?,
        wall_clock_per_review: None,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_report(out_dir, &report)?;
    Ok(report)
}

/// Loads `report.json` from a run directory.
pub fn load_report(run_dir: &Path) -> Result<RunReport> {
    read_json(&run_dir.join(REPORT_JSON))
}
