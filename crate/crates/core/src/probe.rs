//! Linear pairwise reward probe.
//!
//! A desk-scale check that a curated preference corpus carries learnable
//! signal: a linear scorer `r(x) = w·x + b` over embeddings, trained with
//! the pairwise logistic loss `-log sigmoid(r(chosen) - r(rejected))` by
//! full-batch gradient descent. No shuffling, fixed summation order, zero
//! initialization, so a run is a pure function of its inputs.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// One training pair of embeddings.
pub type EmbeddedPair = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRewardModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dim: usize,
    pub seed: u64,
}

impl LinearRewardModel {
    pub fn zeros(dim: usize, seed: u64) -> Self {
        LinearRewardModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            dim,
            seed,
        }
    }

    pub fn reward(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::data(format!("serializing reward model: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::data(format!("reading reward model: {e}")))
    }
}

/// Training settings. `l2` is off by default; the probe measures signal,
/// not generalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 200,
            lr: 0.1,
            l2: 0.0,
            seed: 0,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_dims(pairs: &[EmbeddedPair], dim: usize) -> Result<()> {
    for (i, (chosen, rejected)) in pairs.iter().enumerate() {
        if chosen.len() != dim || rejected.len() != dim {
            return Err(Error::data(format!(
                "pair {i}: embedding dimensions ({}, {}) != {dim}",
                chosen.len(),
                rejected.len()
            )));
        }
    }
    Ok(())
}

/// Mean pairwise logistic loss of `model` on `pairs` (no regularizer).
///
/// The score gap `r(chosen) - r(rejected)` collapses to `w·(chosen -
/// rejected)`: the bias cancels, and translating both embeddings of a pair
/// by the same vector changes nothing.
pub fn pairwise_loss(model: &LinearRewardModel, pairs: &[EmbeddedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::data("loss undefined on empty pair list"));
    }
    check_dims(pairs, model.dim)?;
    let mut sum = 0.0;
    for (chosen, rejected) in pairs {
        let gap = model.reward(chosen) - model.reward(rejected);
        sum += softplus(-gap);
    }
    Ok(sum / pairs.len() as f64)
}

/// Analytic gradient of [`pairwise_loss`] with respect to the weights,
/// accumulated in input order.
pub fn loss_gradient(model: &LinearRewardModel, pairs: &[EmbeddedPair]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::data("gradient undefined on empty pair list"));
    }
    check_dims(pairs, model.dim)?;
    let mut grad = vec![0.0f64; model.dim];
    for (chosen, rejected) in pairs {
        let gap = model.reward(chosen) - model.reward(rejected);
        let coeff = stable_sigmoid(gap) - 1.0;
        for ((g, c), r) in grad.iter_mut().zip(chosen).zip(rejected) {
            *g += coeff * (c - r);
        }
    }
    let n = pairs.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok(grad)
}

/// Full-batch gradient descent from zero weights.
pub fn train_reward(pairs: &[EmbeddedPair], params: &TrainParams) -> Result<LinearRewardModel> {
    if pairs.is_empty() {
        return Err(Error::data("cannot train on an empty pair list"));
    }
    if !(params.lr.is_finite() && params.lr > 0.0) {
        return Err(Error::config("learning rate must be positive"));
    }
    if !(params.l2.is_finite() && params.l2 >= 0.0) {
        return Err(Error::config("l2 must be non-negative"));
    }
    let dim = pairs[0].0.len();
    check_dims(pairs, dim)?;

    let mut model = LinearRewardModel::zeros(dim, params.seed);
    for epoch in 0..params.epochs {
        let mut grad = loss_gradient(&model, pairs)?;
        if params.l2 > 0.0 {
            for (g, w) in grad.iter_mut().zip(&model.weights) {
                *g += params.l2 * w;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::data(format!("non-finite gradient at epoch {epoch}")));
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= params.lr * g;
        }
    }
    Ok(model)
}

/// Fraction of pairs ranked correctly; exact score ties count one half.
pub fn pairwise_accuracy(model: &LinearRewardModel, pairs: &[EmbeddedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::data("accuracy undefined on empty pair list"));
    }
    check_dims(pairs, model.dim)?;
    let mut score = 0.0;
    for (chosen, rejected) in pairs {
        let gap = model.reward(chosen) - model.reward(rejected);
        score += if gap > 0.0 {
            1.0
        } else if gap == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    Ok(score / pairs.len() as f64)
}

/// Linearly separable synthetic pairs: `chosen = v + mu`, `rejected = v -
/// mu` for random `v` and a fixed direction `mu`, so the ranker `w = mu` is
/// exact by construction.
pub fn synthetic_separable_pairs(n: usize, dim: usize, seed: u64) -> Vec<EmbeddedPair> {
    let mut rng = SplitMix64::new(seed);
    let mut direction: Vec<f64> = (0..dim).map(|_| rng.next_in_range(-1.0, 1.0)).collect();
    let norm = dot(&direction, &direction).sqrt();
    if norm > 0.0 {
        for d in &mut direction {
            *d *= 0.5 / norm;
        }
    } else {
        direction[0] = 0.5;
    }
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.next_in_range(-1.0, 1.0)).collect();
            let chosen = v.iter().zip(&direction).map(|(a, b)| a + b).collect();
            let rejected = v.iter().zip(&direction).map(|(a, b)| a - b).collect();
            (chosen, rejected)
        })
        .collect()
}
