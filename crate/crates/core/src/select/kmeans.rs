//! Seeded k-means++ with Lloyd refinement over prompt embeddings.
//!
//! Everything is deterministic: points are visited in sorted-id order, the
//! D² seeding draws from [`SplitMix64`], assignment ties go to the lowest
//! centroid index, and centroid accumulation runs in fixed point order.
//! The assignment step may run on multiple threads; per-point computations
//! are independent, so thread count never changes the result.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMap;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Fitted clustering over prompt embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
    pub inertia: f64,
}

impl ClusterModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::data(format!("serializing cluster model: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::data(format!("reading cluster model: {e}")))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Nearest centroid for one point; ties resolve to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    points
        .par_iter()
        .map(|p| nearest(p, centroids))
        .collect()
}

/// Fits k-means++ then Lloyd iterations until the largest centroid movement
/// drops below `tol` or `max_iters` is reached. Requires at least `k`
/// distinct vectors, all finite and of one dimension.
pub fn kmeans_fit(
    embeddings: &EmbeddingMap,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let (model, _) = kmeans_fit_traced(embeddings, k, seed, max_iters, tol)?;
    Ok(model)
}

/// As [`kmeans_fit`], also returning the inertia recorded after each
/// assignment step (non-increasing under Lloyd updates).
pub(crate) fn kmeans_fit_traced(
    embeddings: &EmbeddingMap,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(ClusterModel, Vec<f64>)> {
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::config("tol must be finite and >= 0"));
    }
    let ids: Vec<&String> = embeddings.keys().collect();
    let points: Vec<Vec<f64>> = embeddings.values().map(|v| v.values().to_vec()).collect();
    validate_points(&ids, &points, k)?;

    let mut rng = SplitMix64::new(seed);
    let mut centroids = plus_plus_seed(&points, k, &mut rng);

    let mut trace = Vec::new();
    let mut assignments = assign_all(&points, &centroids);
    trace.push(assignments.iter().map(|a| a.1).sum());

    for _ in 0..max_iters {
        let new_centroids = update_centroids(&points, &assignments, &centroids);
        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(old, new)| squared_distance(old, new).sqrt())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        assignments = assign_all(&points, &centroids);
        trace.push(assignments.iter().map(|a| a.1).sum());
        if shift < tol {
            break;
        }
    }

    let inertia = assignments.iter().map(|a| a.1).sum();
    let model = ClusterModel {
        k,
        seed,
        centroids,
        assignments: ids
            .iter()
            .zip(&assignments)
            .map(|(id, (c, _))| ((*id).clone(), *c))
            .collect(),
        inertia,
    };
    Ok((model, trace))
}

fn validate_points(ids: &[&String], points: &[Vec<f64>], k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::data("no embeddings to cluster"));
    }
    let dim = points[0].len();
    for (id, p) in ids.iter().zip(points) {
        if p.len() != dim {
            return Err(Error::data(format!(
                "embedding '{id}' has dimension {} != {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("embedding '{id}' has a non-finite value")));
        }
    }
    let mut distinct: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::data(format!(
            "k={k} exceeds the {} distinct embedding vectors",
            distinct.len()
        )));
    }
    Ok(())
}

/// k-means++ D² seeding: the first centroid is uniform, each further one is
/// drawn with probability proportional to squared distance from the nearest
/// already-chosen centroid.
fn plus_plus_seed(points: &[Vec<f64>], k: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.next_below(n)].clone());

    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut cumulative = 0.0;
            let mut picked = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                cumulative += w;
                if cumulative > target {
                    picked = Some(i);
                    break;
                }
            }
            // Float round-off can leave the target just past the last
            // positive weight; fall back to that point.
            picked.unwrap_or_else(|| {
                d2.iter()
                    .rposition(|&w| w > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            // All points coincide with chosen centroids; validated distinct
            // count makes this unreachable, but stay deterministic anyway.
            centroids.len() % n
        };
        centroids.push(points[next].clone());
        for (slot, p) in d2.iter_mut().zip(points) {
            let d = squared_distance(p, centroids.last().expect("just pushed"));
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

/// Mean of each cluster's points, accumulated in fixed point order. A
/// cluster left empty is repaired by seeding it with the point currently
/// farthest from its assigned centroid (lowest index on ties).
fn update_centroids(
    points: &[Vec<f64>],
    assignments: &[(usize, f64)],
    old: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let k = old.len();
    let dim = points[0].len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (point, (cluster, _)) in points.iter().zip(assignments) {
        counts[*cluster] += 1;
        for (acc, v) in sums[*cluster].iter_mut().zip(point) {
            *acc += v;
        }
    }

    let mut new_centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        if counts[j] == 0 {
            new_centroids.push(old[j].clone()); // placeholder, repaired below
        } else {
            new_centroids.push(sums[j].iter().map(|s| s / counts[j] as f64).collect());
        }
    }

    let mut taken: Vec<usize> = Vec::new();
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let farthest = assignments
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .max_by(|(i, a), (j2, b)| a.1.total_cmp(&b.1).then(j2.cmp(i)))
            .map(|(i, _)| i)
            .expect("nonempty point set");
        taken.push(farthest);
        new_centroids[j] = points[farthest].clone();
    }
    new_centroids
}
