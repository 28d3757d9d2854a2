use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Completion, InferRequest};
use crate::types::Label;

/// What the mock emits for an invalid outcome.
pub const INVALID_OUTPUT: &str = "N/A";

const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Per-call output distribution of the mock annotator, relative to the
/// true label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p_correct: f64,
    /// Split evenly over truth ± 1; at 1 and 5 it all goes to the one
    /// valid neighbour.
    pub p_adjacent: f64,
    /// Uniform over the four wrong labels.
    pub p_uniform_error: f64,
    pub p_invalid: f64,
}

impl NoiseModel {
    pub fn new(p_correct: f64, p_adjacent: f64, p_uniform_error: f64, p_invalid: f64) -> Result<Self, BackendError> {
        let model = NoiseModel { p_correct, p_adjacent, p_uniform_error, p_invalid };
        model.validate()?;
        Ok(model)
    }

    pub fn noiseless() -> Self {
        NoiseModel { p_correct: 1.0, p_adjacent: 0.0, p_uniform_error: 0.0, p_invalid: 0.0 }
    }

    fn weights(&self) -> [f64; 4] {
        [self.p_correct, self.p_adjacent, self.p_uniform_error, self.p_invalid]
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let w = self.weights();
        if w.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(BackendError::Config(format!("noise probabilities must lie in [0, 1]: {self:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(BackendError::Config(format!("noise probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Probability of each label (index 0..5) and of an invalid output
    /// (index 5) given the true label.
    pub fn outcome_probabilities(&self, truth: Label) -> [f64; 6] {
        let mut p = [0.0; 6];
        p[truth.index()] += self.p_correct;
        let neighbours = adjacent(truth);
        for n in &neighbours {
            p[n.index()] += self.p_adjacent / neighbours.len() as f64;
        }
        for label in Label::all().filter(|&l| l != truth) {
            p[label.index()] += self.p_uniform_error / 4.0;
        }
        p[5] = self.p_invalid;
        p
    }
}

/// Parses `p_correct=0.8,p_uniform_error=0.2`; unnamed fields are 0.
impl std::str::FromStr for NoiseModel {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut model = NoiseModel { p_correct: 0.0, p_adjacent: 0.0, p_uniform_error: 0.0, p_invalid: 0.0 };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| BackendError::Config(format!("expected key=value in noise spec, got '{part}'")))?;
            let value: f64 =
                value.trim().parse().map_err(|_| BackendError::Config(format!("bad probability in '{part}'")))?;
            let slot = match key.trim() {
                "p_correct" => &mut model.p_correct,
                "p_adjacent" => &mut model.p_adjacent,
                "p_uniform_error" => &mut model.p_uniform_error,
                "p_invalid" => &mut model.p_invalid,
                other => return Err(BackendError::Config(format!("unknown noise parameter '{other}'"))),
            };
            *slot = value;
        }
        model.validate()?;
        Ok(model)
    }
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "p_correct={},p_adjacent={},p_uniform_error={},p_invalid={}",
            self.p_correct, self.p_adjacent, self.p_uniform_error, self.p_invalid
        )
    }
}

fn adjacent(truth: Label) -> Vec<Label> {
    let v = i64::from(truth.value());
    [v - 1, v + 1].into_iter().filter_map(|x| Label::new(x).ok()).collect()
}

fn rng_for(seed: u64, sample_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"seedvote-mock\0");
    hasher.update(seed.to_le_bytes());
    hasher.update(sample_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Draws one annotation. The RNG is keyed only by `(seed, sample_id)`, so
/// the result does not depend on call order or scheduling.
pub fn mock_annotate(truth: Label, noise: &NoiseModel, seed: u64, sample_id: &str) -> String {
    let mut rng = rng_for(seed, sample_id);
    let u: f64 = rng.random();
    let weights = noise.weights();
    let mut cumulative = 0.0;
    let mut outcome = None;
    for (i, w) in weights.iter().enumerate() {
        cumulative += w;
        if u < cumulative {
            outcome = Some(i);
            break;
        }
    }
    // u can land past a sum of 1 - 1e-12; fall back to the last live outcome
    let outcome = outcome.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).unwrap_or(0));
    match outcome {
        0 => truth.to_string(),
        1 => {
            let neighbours = adjacent(truth);
            neighbours[rng.random_range(0..neighbours.len())].to_string()
        }
        2 => {
            let wrong: Vec<Label> = Label::all().filter(|&l| l != truth).collect();
            wrong[rng.random_range(0..wrong.len())].to_string()
        }
        _ => INVALID_OUTPUT.to_string(),
    }
}

/// Offline backend backed by [`mock_annotate`].
#[derive(Debug, Clone)]
pub struct MockBackend {
    noise: NoiseModel,
    latency: f64,
}

impl MockBackend {
    pub fn new(noise: NoiseModel, latency: f64) -> Self {
        MockBackend { noise, latency }
    }
}

impl Backend for MockBackend {
    fn infer(&self, request: &InferRequest<'_>) -> Result<Completion, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        Ok(Completion {
            raw_output: mock_annotate(request.target.stars, &self.noise, request.seed, &request.target.sample_id),
            latency: self.latency,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ReviewSample;
    use chrono::Utc;

    fn label(v: i64) -> Label {
        Label::new(v).unwrap()
    }

    #[test]
    fn degenerate_distributions() {
        let always_right = NoiseModel::noiseless();
        let always_invalid = NoiseModel::new(0.0, 0.0, 0.0, 1.0).unwrap();
        for seed in 0..20 {
            assert_eq!(mock_annotate(label(3), &always_right, seed, "s"), "3");
            assert_eq!(mock_annotate(label(5), &always_right, seed, "s"), "5");
            assert_eq!(mock_annotate(label(3), &always_invalid, seed, "s"), INVALID_OUTPUT);
        }
    }

    #[test]
    fn adjacent_clips_at_edges() {
        let adjacent_only = NoiseModel::new(0.0, 1.0, 0.0, 0.0).unwrap();
        for i in 0..200 {
            let id = format!("s{i}");
            assert_eq!(mock_annotate(label(1), &adjacent_only, 1, &id), "2");
            assert_eq!(mock_annotate(label(5), &adjacent_only, 1, &id), "4");
            let mid = mock_annotate(label(3), &adjacent_only, 1, &id);
            assert!(mid == "2" || mid == "4");
        }
        let p = adjacent_only.outcome_probabilities(label(1));
        assert_eq!(p, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn outcome_probabilities_are_proper() {
        let noise = NoiseModel::new(0.6, 0.2, 0.15, 0.05).unwrap();
        for truth in Label::all() {
            let p = noise.outcome_probabilities(truth);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_improper_models() {
        assert!(NoiseModel::new(0.5, 0.5, 0.5, 0.0).is_err());
        assert!(NoiseModel::new(1.2, -0.2, 0.0, 0.0).is_err());
        assert!(NoiseModel::new(0.1, 0.2, 0.3, 0.4).is_ok());
    }

    #[test]
    fn noise_spec_parsing() {
        let n: NoiseModel = "p_correct=0.8, p_uniform_error=0.2".parse().unwrap();
        assert_eq!(n, NoiseModel::new(0.8, 0.0, 0.2, 0.0).unwrap());
        assert_eq!(n.to_string().parse::<NoiseModel>().unwrap(), n);
        assert!("p_correct=0.8".parse::<NoiseModel>().is_err());
        assert!("p_right=1".parse::<NoiseModel>().is_err());
        assert!("p_correct".parse::<NoiseModel>().is_err());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let noise = NoiseModel::new(0.5, 0.2, 0.2, 0.1).unwrap();
        let ids: Vec<String> = (0..100).map(|i| format!("sample-{i}")).collect();
        for id in &ids {
            assert_eq!(mock_annotate(label(4), &noise, 7, id), mock_annotate(label(4), &noise, 7, id));
        }
        let differs =
            ids.iter().any(|id| mock_annotate(label(4), &noise, 1, id) != mock_annotate(label(4), &noise, 2, id));
        assert!(differs);
    }

    #[test]
    fn empirical_frequency_of_correct_label() {
        let noise = NoiseModel::new(0.8, 0.0, 0.2, 0.0).unwrap();
        let draws = 100_000;
        let hits = (0..draws).filter(|i| mock_annotate(label(5), &noise, 1, &format!("mc-{i}")) == "5").count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.8).abs() <= 0.01, "frequency {freq}");
    }

    #[test]
    fn backend_uses_target_truth() {
        let backend = MockBackend::new(NoiseModel::noiseless(), 0.5);
        let target = ReviewSample {
            sample_id: "t".into(),
            user_id: "u".into(),
            business_id: "b".into(),
            text: "meh".into(),
            stars: label(2),
            posted_at: Utc::now(),
        };
        let out = backend.infer(&InferRequest { prompt: "p", seed: 3, target: &target }).unwrap();
        assert_eq!(out.raw_output, "2");
        assert_eq!(out.latency, 0.5);
        assert!(matches!(
            backend.infer(&InferRequest { prompt: "", seed: 3, target: &target }),
            Err(BackendError::EmptyPrompt)
        ));
    }
}
