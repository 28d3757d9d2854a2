use std::path::Path;

use serde::Serialize;

use super::manifest::RunReport;
use crate::error::{Error, Result};
use crate::eval::{lift, LiftRow};

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub baseline_model: String,
    pub model: String,
    pub rows: Vec<LiftRow>,
}

pub fn compare_reports(baseline: &RunReport, model: &RunReport) -> Result<Comparison> {
    if baseline.fixture_sha256 != model.fixture_sha256 {
        return Err(Error::FixtureMismatch {
            baseline: baseline.fixture_sha256.clone(),
            run: model.fixture_sha256.clone(),
        });
    }
    Ok(Comparison {
        baseline_model: baseline.model.clone(),
        model: model.model.clone(),
        rows: lift(&baseline.metrics, &model.metrics),
    })
}

/// Lift of the run in `run_dir` over the one in `baseline_dir`.
pub fn compare(baseline_dir: &Path, run_dir: &Path) -> Result<Comparison> {
    compare_reports(&super::load_report(baseline_dir)?, &super::load_report(run_dir)?)
}

pub fn render_lift_table(comparison: &Comparison) -> String {
    let mut out = format!(
        "Lift of {} over baseline {}\n{:<10} {:>12} {:>12} {:>10}\n",
        comparison.model, comparison.baseline_model, "Metric", "Baseline", "Model", "Lift"
    );
    for row in &comparison.rows {
        out.push_str(&format!(
            "{:<10} {:>12.3} {:>12.3} {:>10}\n",
            row.metric.to_string(),
            row.baseline_value,
            row.model_value,
            row.lift_display()
        ));
    }
    out.push_str(
        "lift = (baseline - model) / baseline for RMSE and time, (model - baseline) / baseline for accuracy\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::AggregationStrategy;
    use crate::eval::MetricsReport;

    fn report(sha: &str, rmse: f64) -> RunReport {
        RunReport {
            model: "m".into(),
            aggregation: AggregationStrategy::Median,
            k: 5,
            fixture_sha256: sha.into(),
            metrics: MetricsReport { rmse, accuracy: 0.7, mean_latency: 2.0, n_scored: 10, n_unscored: 0 },
            wall_clock_per_review: None,
        }
    }

    #[test]
    fn reflexive_comparison_is_zero() {
        let r = report("abc", 0.5);
        let c = compare_reports(&r, &r).unwrap();
        assert!(c.rows.iter().all(|row| row.lift_display() == "+0.0%"));
        assert!(render_lift_table(&c).contains("+0.0%"));
    }

    #[test]
    fn refuses_different_fixtures() {
        let err = compare_reports(&report("aaa", 0.5), &report("bbb", 0.4)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("aaa") && msg.contains("bbb"), "{msg}");
    }
}
