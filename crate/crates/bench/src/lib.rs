//! Synthetic data builders shared by the criterion benchmarks.

use unifeed_core::embed::{EmbeddingMap, EmbeddingVector};
use unifeed_core::rng::SplitMix64;
use unifeed_core::unify::{PreferencePair, Source};

pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| rng.next_f64()).collect()
}

/// Gaussian-ish blobs around `centers` grid points so clustering has work to do.
pub fn random_embeddings(n: usize, dim: usize, centers: usize, seed: u64) -> EmbeddingMap {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let center = (i % centers) as f64 * 10.0;
            let values: Vec<f64> = (0..dim)
                .map(|_| center + rng.next_in_range(-1.0, 1.0))
                .collect();
            (
                format!("p{i:05}"),
                EmbeddingVector::new(values).expect("finite values"),
            )
        })
        .collect()
}

pub fn random_pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| PreferencePair {
            prompt: format!("prompt {i}"),
            chosen: format!("chosen {i}"),
            rejected: format!("rejected {i}"),
            margin: rng.next_f64(),
            source: if i % 3 == 0 {
                Source::Choice
            } else {
                Source::Multilabel
            },
            axis: Some("quality".to_owned()),
            prompt_id: format!("p{i:05}"),
        })
        .collect()
}
