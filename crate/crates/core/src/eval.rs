//! Metrics, lift tables, the chance-level baseline and the exact expected
//! error of median-of-K voting under a [`NoiseModel`].

use std::collections::HashMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregationStrategy;
use crate::backend::NoiseModel;
use crate::error::{Error, Result};
use crate::types::{EnsembleResult, Label, ReviewSample};

/// Largest worker count accepted by [`exact_ensemble_rmse`].
pub const MAX_EXACT_K: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    /// Concordance rate: share of scored samples whose label matches.
    pub accuracy: f64,
    /// Seconds of inference per review.
    pub mean_latency: f64,
    pub n_scored: usize,
    /// Samples whose aggregate is absent.
    pub n_unscored: usize,
}

/// How per-sample time is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyRule {
    /// Sum over all workers: the sequential-equivalent cost.
    SumOfWorkers,
    /// Only the latency of the given worker.
    SingleWorker(u32),
}

impl From<AggregationStrategy> for LatencyRule {
    fn from(strategy: AggregationStrategy) -> Self {
        match strategy {
            AggregationStrategy::Single(w) => LatencyRule::SingleWorker(w),
            _ => LatencyRule::SumOfWorkers,
        }
    }
}

fn score_pairs(pairs: impl IntoIterator<Item = (Option<Label>, Label, f64)>) -> Result<MetricsReport> {
    let (mut n_scored, mut n_unscored, mut hits) = (0usize, 0usize, 0usize);
    let mut squared = 0u64;
    let mut latency = 0.0;
    for (pred, truth, seconds) in pairs {
        latency += seconds;
        match pred {
            Some(p) => {
                n_scored += 1;
                let diff = u64::from(p.value().abs_diff(truth.value()));
                squared += diff * diff;
                hits += usize::from(p == truth);
            }
            None => n_unscored += 1,
        }
    }
    if n_scored == 0 {
        return Err(Error::NothingScored);
    }
    Ok(MetricsReport {
        rmse: (squared as f64 / n_scored as f64).sqrt(),
        accuracy: hits as f64 / n_scored as f64,
        mean_latency: latency / (n_scored + n_unscored) as f64,
        n_scored,
        n_unscored,
    })
}

/// Scores results against the test set. Each test sample must have exactly
/// one result.
pub fn score(results: &[EnsembleResult], truth: &[ReviewSample], latency: LatencyRule) -> Result<MetricsReport> {
    let mut by_id: HashMap<&str, Option<&EnsembleResult>> =
        truth.iter().map(|s| (s.sample_id.as_str(), None)).collect();
    for r in results {
        match by_id.get_mut(r.sample_id.as_str()) {
            None => return Err(Error::validation(format!("result for unknown sample '{}'", r.sample_id))),
            Some(Some(_)) => return Err(Error::validation(format!("duplicate result for sample '{}'", r.sample_id))),
            Some(slot) => *slot = Some(r),
        }
    }
    let mut pairs = Vec::with_capacity(truth.len());
    for sample in truth {
        let r = by_id[sample.sample_id.as_str()]
            .ok_or_else(|| Error::validation(format!("no result for sample '{}'", sample.sample_id)))?;
        let seconds = match latency {
            LatencyRule::SumOfWorkers => r.total_latency(),
            LatencyRule::SingleWorker(w) => r.votes.iter().find(|v| v.worker_id == w).map_or(0.0, |v| v.latency),
        };
        pairs.push((r.aggregated, sample.stars, seconds));
    }
    score_pairs(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftMetric {
    Rmse,
    Accuracy,
    Time,
}

impl fmt::Display for LiftMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LiftMetric::Rmse => "RMSE",
            LiftMetric::Accuracy => "Acc.",
            LiftMetric::Time => "Time (s)",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftRow {
    pub metric: LiftMetric,
    pub baseline_value: f64,
    pub model_value: f64,
    /// Signed percentage; `None` when the baseline value is zero.
    pub lift: Option<f64>,
}

impl LiftRow {
    /// Lift rounded to one decimal place.
    pub fn lift_rounded(&self) -> Option<f64> {
        self.lift.map(|l| {
            let r = (l * 10.0).round() / 10.0;
            if r == 0.0 {
                0.0
            } else {
                r
            }
        })
    }

    /// `+18.6%`, `-0.1%`, or `undefined`.
    pub fn lift_display(&self) -> String {
        self.lift_rounded().map_or_else(|| "undefined".to_string(), |l| format!("{l:+.1}%"))
    }
}

/// Relative improvement of `model` over `baseline`: `(baseline - model) /
/// baseline` for RMSE and time, `(model - baseline) / baseline` for accuracy.
pub fn lift(baseline: &MetricsReport, model: &MetricsReport) -> Vec<LiftRow> {
    let row = |metric, b: f64, m: f64| {
        let lift = (b != 0.0).then(|| {
            let delta = if metric == LiftMetric::Accuracy { m - b } else { b - m };
            100.0 * delta / b
        });
        LiftRow { metric, baseline_value: b, model_value: m, lift }
    };
    vec![
        row(LiftMetric::Rmse, baseline.rmse, model.rmse),
        row(LiftMetric::Accuracy, baseline.accuracy, model.accuracy),
        row(LiftMetric::Time, baseline.mean_latency, model.mean_latency),
    ]
}

/// Label frequencies, typically from training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram([f64; 5]);

impl LabelHistogram {
    pub fn new(weights: [f64; 5]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::validation("label histogram needs non-negative weights with a positive total"));
        }
        Ok(LabelHistogram(weights))
    }

    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Result<Self> {
        let mut counts = [0.0; 5];
        for l in labels {
            counts[l.index()] += 1.0;
        }
        Self::new(counts)
    }

    pub fn weights(&self) -> &[f64; 5] {
        &self.0
    }
}

/// Scores labels drawn i.i.d. from `histogram`, one per test sample.
pub fn chance_baseline(histogram: &LabelHistogram, truth: &[ReviewSample], seed: u64) -> Result<MetricsReport> {
    let dist = WeightedIndex::new(histogram.0).map_err(|e| Error::validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    score_pairs(truth.iter().map(|s| (Some(Label::from_index(dist.sample(&mut rng))), s.stars, 0.0)))
}

/// Expected squared error conditional on the prediction being present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedError {
    pub mse: f64,
    /// Probability that a prediction exists at all.
    pub p_scored: f64,
}

impl ExpectedError {
    pub fn rmse(&self) -> f64 {
        self.mse.sqrt()
    }

    /// Pools per-truth expectations with the given truth weights, counting
    /// only scored samples like [`score`] does.
    pub fn pooled(parts: &[(f64, ExpectedError)]) -> ExpectedError {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        let scored: f64 = parts.iter().map(|(w, e)| w * e.p_scored).sum();
        let squared: f64 = parts.iter().map(|(w, e)| w * e.p_scored * e.mse).sum();
        ExpectedError { mse: squared / scored, p_scored: scored / total }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRmse {
    pub k: usize,
    pub single: ExpectedError,
    pub median: ExpectedError,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// P(at least `r` of `v` i.i.d. draws fall at or below a point of CDF `f`).
fn at_least(r: usize, v: usize, f: f64) -> f64 {
    (r..=v).map(|j| binomial(v, j) * f.powi(j as i32) * (1.0 - f).powi((v - j) as i32)).sum()
}

/// Exact expected RMSE of a single draw and of the median of `k` draws.
///
/// The number of valid votes `v` is binomial; given `v`, the lower median
/// is the `ceil(v/2)`-th order statistic whose CDF is
/// `P(X_(r) <= m) = P(at least r of v draws <= m)`.
pub fn exact_ensemble_rmse(noise: &NoiseModel, truth: Label, k: usize) -> Result<EnsembleRmse> {
    noise.validate()?;
    if k == 0 || k.is_multiple_of(2) || k > MAX_EXACT_K {
        return Err(Error::validation(format!("worker count must be odd and in 1..={MAX_EXACT_K}, got {k}")));
    }
    let p = noise.outcome_probabilities(truth);
    let q = 1.0 - p[5];
    if q <= 0.0 {
        return Err(Error::validation("noise model never produces a valid label"));
    }
    let conditional: Vec<f64> = p[..5].iter().map(|x| x / q).collect();
    let sq_err = |i: usize| {
        let d = i as f64 - truth.index() as f64;
        d * d
    };

    let single_mse: f64 = conditional.iter().enumerate().map(|(i, c)| c * sq_err(i)).sum();

    let mut cdf = [0.0; 5];
    let mut acc = 0.0;
    for (i, c) in conditional.iter().enumerate() {
        acc += c;
        cdf[i] = acc.min(1.0);
    }
    cdf[4] = 1.0;

    let mut weighted_mse = 0.0;
    let mut p_scored = 0.0;
    for v in 1..=k {
        let p_v = binomial(k, v) * q.powi(v as i32) * p[5].powi((k - v) as i32);
        if p_v == 0.0 {
            continue;
        }
        let r = v.div_ceil(2);
        let mut prev = 0.0;
        let mut mse_v = 0.0;
        for (m, f) in cdf.iter().enumerate() {
            let cum = at_least(r, v, *f);
            mse_v += (cum - prev) * sq_err(m);
            prev = cum;
        }
        weighted_mse += p_v * mse_v;
        p_scored += p_v;
    }

    Ok(EnsembleRmse {
        k,
        single: ExpectedError { mse: single_mse, p_scored: q },
        median: ExpectedError { mse: weighted_mse / p_scored, p_scored },
    })
}
