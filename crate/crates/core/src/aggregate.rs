//! Combining worker votes into one label per sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EnsembleResult, Label, WorkerPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AggregationStrategy {
    /// Lower median of the valid votes.
    Median,
    /// Mode of the valid votes, ties resolved towards the median.
    Majority,
    /// The vote of one worker, 1-based.
    Single(u32),
}

impl AggregationStrategy {
    /// Checks that a `Single` worker id refers to one of `k` workers.
    pub fn validate(self, k: usize) -> Result<()> {
        match self {
            AggregationStrategy::Single(w) if w == 0 || w as usize > k => {
                Err(Error::validation(format!("single:{w} does not name one of the {k} configured workers")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_ensemble(self) -> bool {
        !matches!(self, AggregationStrategy::Single(_))
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationStrategy::Median => f.write_str("median"),
            AggregationStrategy::Majority => f.write_str("majority"),
            AggregationStrategy::Single(w) => write!(f, "single:{w}"),
        }
    }
}

impl FromStr for AggregationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(AggregationStrategy::Median),
            "majority" => Ok(AggregationStrategy::Majority),
            _ => {
                let worker = s
                    .strip_prefix("single:")
                    .and_then(|w| w.parse::<u32>().ok())
                    .filter(|&w| w >= 1)
                    .ok_or_else(|| {
                        Error::validation(format!("unknown aggregation '{s}', expected median, majority or single:<w>"))
                    })?;
                Ok(AggregationStrategy::Single(worker))
            }
        }
    }
}

impl From<AggregationStrategy> for String {
    fn from(s: AggregationStrategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for AggregationStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn sorted_valid(votes: &[WorkerPrediction]) -> Vec<Label> {
    let mut valid: Vec<Label> = votes.iter().filter_map(|v| v.parsed).collect();
    valid.sort_unstable();
    valid
}

/// Lower median of an ascending slice.
fn lower_median(sorted: &[Label]) -> Option<Label> {
    if sorted.is_empty() {
        None
    } else {
        Some(sorted[(sorted.len() - 1) / 2])
    }
}

/// Median over the valid votes only; `None` when none is valid.
///
/// For an even number of valid votes the lower of the two middle values is
/// taken so the result is always an attainable label.
pub fn aggregate_median(votes: &[WorkerPrediction]) -> Option<Label> {
    lower_median(&sorted_valid(votes))
}

/// Most frequent valid vote. Ties go to the tied label closest to the
/// (lower) median of all valid votes, then to the smaller label.
pub fn aggregate_majority(votes: &[WorkerPrediction]) -> Option<Label> {
    let valid = sorted_valid(votes);
    let median = lower_median(&valid)?;
    let mut counts = [0usize; 5];
    for label in &valid {
        counts[label.index()] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    Label::all().filter(|l| counts[l.index()] == top).min_by_key(|l| (l.value().abs_diff(median.value()), l.value()))
}

/// Aggregates one sample's votes with `strategy`.
pub fn aggregate(strategy: AggregationStrategy, votes: Vec<WorkerPrediction>) -> Result<EnsembleResult> {
    let sample_id = match votes.first() {
        Some(v) => v.sample_id.clone(),
        None => return Err(Error::validation("cannot aggregate an empty vote list")),
    };
    if let Some(other) = votes.iter().find(|v| v.sample_id != sample_id) {
        return Err(Error::validation(format!("votes mix samples '{sample_id}' and '{}'", other.sample_id)));
    }
    let aggregated = match strategy {
        AggregationStrategy::Median => aggregate_median(&votes),
        AggregationStrategy::Majority => aggregate_majority(&votes),
        AggregationStrategy::Single(w) => {
            votes
                .iter()
                .find(|v| v.worker_id == w)
                .ok_or_else(|| Error::validation(format!("no vote from worker {w} for '{sample_id}'")))?
                .parsed
        }
    };
    let valid_count = votes.iter().filter(|v| v.is_valid()).count();
    Ok(EnsembleResult { sample_id, votes, aggregated, valid_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::ParseReason;
    use proptest::prelude::*;

    fn votes(values: &[Option<u8>]) -> Vec<WorkerPrediction> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| WorkerPrediction {
                sample_id: "s".into(),
                worker_id: i as u32 + 1,
                seed: i as u64 + 1,
                raw_output: v.map_or_else(|| "N/A".to_string(), |v| v.to_string()),
                parsed: v.map(|v| Label::new(i64::from(v)).unwrap()),
                reason: if v.is_some() { ParseReason::Ok } else { ParseReason::NoDigit },
                latency: 1.0,
            })
            .collect()
    }

    fn v(values: &[u8]) -> Vec<WorkerPrediction> {
        votes(&values.iter().map(|&x| Some(x)).collect::<Vec<_>>())
    }

    fn median(values: &[Option<u8>]) -> Option<u8> {
        aggregate_median(&votes(values)).map(Label::value)
    }

    fn majority(values: &[Option<u8>]) -> Option<u8> {
        aggregate_majority(&votes(values)).map(Label::value)
    }

    #[test]
    fn median_vote_patterns() {
        assert_eq!(aggregate_median(&v(&[4, 4, 4, 4, 4])).map(Label::value), Some(4));
        assert_eq!(aggregate_median(&v(&[2, 2, 2, 3, 3])).map(Label::value), Some(2));
        assert_eq!(aggregate_median(&v(&[5, 5, 5, 5, 1])).map(Label::value), Some(5));
    }

    #[test]
    fn median_skips_invalid() {
        assert_eq!(median(&[Some(3), None, Some(5), None, Some(4)]), Some(4));
        assert_eq!(median(&[Some(2), Some(3), None, None, None]), Some(2));
        assert_eq!(median(&[None; 5]), None);
    }

    #[test]
    fn majority_ties() {
        assert_eq!(majority(&[Some(5), Some(5), Some(5), Some(5), Some(1)]), Some(5));
        assert_eq!(majority(&[Some(1), Some(1), Some(2), Some(2), Some(3)]), Some(2));
        assert_eq!(majority(&[Some(1), Some(1), Some(5), Some(5), None]), Some(1));
        assert_eq!(majority(&[None, None]), None);
    }

    #[test]
    fn dispatch() {
        let r = aggregate(AggregationStrategy::Median, v(&[2, 2, 2, 3, 3])).unwrap();
        assert_eq!(r.aggregated.map(Label::value), Some(2));
        assert_eq!(r.valid_count, 5);

        let r = aggregate(AggregationStrategy::Single(3), v(&[4, 4, 1, 4, 4])).unwrap();
        assert_eq!(r.aggregated.map(Label::value), Some(1));

        let r = aggregate(AggregationStrategy::Median, votes(&[None; 5])).unwrap();
        assert_eq!(r.aggregated, None);
        assert_eq!(r.valid_count, 0);

        let r = aggregate(AggregationStrategy::Single(2), votes(&[Some(4), None, Some(4)])).unwrap();
        assert_eq!(r.aggregated, None);
    }

    #[test]
    fn dispatch_rejects_mixed_samples() {
        let mut mixed = v(&[1, 2]);
        mixed[1].sample_id = "other".into();
        assert!(aggregate(AggregationStrategy::Median, mixed).is_err());
        assert!(aggregate(AggregationStrategy::Median, Vec::new()).is_err());
        assert!(aggregate(AggregationStrategy::Single(9), v(&[1, 2])).is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("median".parse::<AggregationStrategy>().unwrap(), AggregationStrategy::Median);
        assert_eq!("single:3".parse::<AggregationStrategy>().unwrap(), AggregationStrategy::Single(3));
        assert!("single:0".parse::<AggregationStrategy>().is_err());
        assert!("mean".parse::<AggregationStrategy>().is_err());
        assert!(AggregationStrategy::Single(6).validate(5).is_err());
        assert!(AggregationStrategy::Single(5).validate(5).is_ok());
        let json = serde_json::to_string(&AggregationStrategy::Single(2)).unwrap();
        assert_eq!(json, "\"single:2\"");
    }

    fn vote_vec() -> impl Strategy<Value = Vec<Option<u8>>> {
        proptest::collection::vec(proptest::option::weighted(0.8, 1u8..=5), 1..9)
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut values in vote_vec(), seed in any::<u64>()) {
            let before = (median(&values), majority(&values));
            let n = values.len();
            // deterministic Fisher-Yates driven by `seed`
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                values.swap(i, (state >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(before, (median(&values), majority(&values)));
        }

        #[test]
        fn within_valid_range(values in vote_vec()) {
            let valid: Vec<u8> = values.iter().flatten().copied().collect();
            for out in [median(&values), majority(&values)] {
                match out {
                    None => prop_assert!(valid.is_empty()),
                    Some(x) => {
                        prop_assert!(*valid.iter().min().unwrap() <= x);
                        prop_assert!(x <= *valid.iter().max().unwrap());
                    }
                }
            }
        }

        #[test]
        fn strict_majority_wins(values in vote_vec()) {
            let valid: Vec<u8> = values.iter().flatten().copied().collect();
            for label in 1..=5u8 {
                if 2 * valid.iter().filter(|&&x| x == label).count() > valid.len() {
                    prop_assert_eq!(median(&values), Some(label));
                    prop_assert_eq!(majority(&values), Some(label));
                }
            }
        }

        #[test]
        fn median_monotone(values in vote_vec(), idx in any::<prop::sample::Index>(), bump in 1u8..=4) {
            let i = idx.index(values.len());
            if let Some(old) = values[i] {
                let mut raised = values.clone();
                raised[i] = Some((old + bump).min(5));
                prop_assert!(median(&raised) >= median(&values));
            }
        }
    }
}
