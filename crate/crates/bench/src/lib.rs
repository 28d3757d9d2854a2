//! Benchmark helpers.

use seedvote::{parse_label, WorkerPrediction};

/// All 6^k vote vectors over {1..5, invalid} for one sample.
pub fn all_vote_vectors(k: u32) -> Vec<Vec<WorkerPrediction>> {
    (0..6usize.pow(k))
        .map(|code| {
            (0..k)
                .map(|w| {
                    let v = code / 6usize.pow(w) % 6;
                    let raw_output = if v == 0 { "N/A".to_string() } else { v.to_string() };
                    let outcome = parse_label(&raw_output);
                    WorkerPrediction {
                        sample_id: "bench".into(),
                        worker_id: w + 1,
                        seed: u64::from(w + 1),
                        raw_output,
                        parsed: outcome.parsed,
                        reason: outcome.reason,
                        latency: 0.0,
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn enumerates_every_vector() {
        assert_eq!(super::all_vote_vectors(5).len(), 7776);
    }
}
