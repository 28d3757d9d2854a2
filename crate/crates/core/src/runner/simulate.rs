//! Exact and Monte-Carlo expected RMSE of single vs median-of-K voting
//! under the mock annotator.

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::aggregate_median;
use crate::backend::{mock_annotate, NoiseModel};
use crate::error::{Error, Result};
use crate::eval::exact_ensemble_rmse;
use crate::parse::parse_label;
use crate::types::{Label, WorkerPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mse: f64,
    /// Standard error of `mse`.
    pub mse_std_err: f64,
    pub n_scored: usize,
    pub n_unscored: usize,
}

impl McEstimate {
    pub fn rmse(&self) -> f64 {
        self.mse.sqrt()
    }

    /// Delta-method standard error of the RMSE.
    pub fn rmse_std_err(&self) -> f64 {
        if self.mse > 0.0 {
            self.mse_std_err / (2.0 * self.rmse())
        } else {
            0.0
        }
    }
}

/// Runs `samples` simulated reviews with true label `truth` through `k`
/// mock workers (seeds `1..=k`), the parser and the median.
pub fn monte_carlo(noise: &NoiseModel, truth: Label, k: usize, samples: usize) -> McEstimate {
    let seeds: Vec<u64> = (1..=k as u64).collect();
    // squared errors are small integers, so the sums are exact and the
    // parallel reduction is order independent
    let (n_scored, sum, sum_sq) = (0..samples)
        .into_par_iter()
        .map(|i| {
            let sample_id = format!("sim-{truth}-{i}");
            let votes: Vec<WorkerPrediction> = seeds
                .iter()
                .enumerate()
                .map(|(w, &seed)| {
                    let raw_output = mock_annotate(truth, noise, seed, &sample_id);
                    let outcome = parse_label(&raw_output);
                    WorkerPrediction {
                        sample_id: sample_id.clone(),
                        worker_id: w as u32 + 1,
                        seed,
                        raw_output,
                        parsed: outcome.parsed,
                        reason: outcome.reason,
                        latency: 0.0,
                    }
                })
                .collect();
            match aggregate_median(&votes) {
                Some(pred) => {
                    let d = u64::from(pred.value().abs_diff(truth.value()));
                    (1u64, d * d, d * d * d * d)
                }
                None => (0, 0, 0),
            }
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = n_scored as f64;
    let mse = if n_scored > 0 { sum as f64 / n } else { f64::NAN };
    let var = if n_scored > 1 { (sum_sq as f64 - n * mse * mse) / (n - 1.0) } else { 0.0 };
    McEstimate {
        mse,
        mse_std_err: (var.max(0.0) / n).sqrt(),
        n_scored: n_scored as usize,
        n_unscored: samples - n_scored as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationRow {
    pub noise: NoiseModel,
    pub truth: Label,
    pub k: usize,
    pub exact_rmse: f64,
    pub empirical_rmse: f64,
    pub empirical_std_err: f64,
    pub samples: usize,
}

/// One row per (noise model, truth, K).
pub fn simulate(grid: &[NoiseModel], ks: &[usize], truths: &[Label], samples: usize) -> Result<Vec<SimulationRow>> {
    if let Some(k) = ks.iter().find(|&&k| k % 2 == 0) {
        return Err(Error::validation(format!("worker counts must be odd, got {k}")));
    }
    if samples == 0 {
        return Err(Error::validation("need at least one simulated sample"));
    }
    let mut rows = Vec::new();
    for noise in grid {
        for &truth in truths {
            for &k in ks {
                let exact = exact_ensemble_rmse(noise, truth, k)?;
                let mc = monte_carlo(noise, truth, k, samples);
                rows.push(SimulationRow {
                    noise: *noise,
                    truth,
                    k,
                    exact_rmse: exact.median.rmse(),
                    empirical_rmse: mc.rmse(),
                    empirical_std_err: mc.rmse_std_err(),
                    samples,
                });
            }
        }
    }
    Ok(rows)
}

pub fn render_simulation(rows: &[SimulationRow]) -> String {
    let mut out =
        format!("{:<62} {:>5} {:>3} {:>11} {:>11} {:>9}\n", "noise", "truth", "K", "exact RMSE", "MC RMSE", "MC s.e.");
    for r in rows {
        out.push_str(&format!(
            "{:<62} {:>5} {:>3} {:>11.6} {:>11.6} {:>9.6}\n",
            r.noise.to_string(),
            r.truth,
            r.k,
            r.exact_rmse,
            r.empirical_rmse,
            r.empirical_std_err
        ));
    }
    out
}
