//! Lloyd's algorithm with k-means++ seeding.

use crate::error::{Error, Result};
use crate::rng::{self, rng_from};
use crate::tensor::{squared_distance, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Result of a k-means run.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    /// Cluster id per input row. Ties in distance go to the lower centroid
    /// index.
    pub assignments: Vec<usize>,
    /// `k x d` centroid matrix. A centroid that loses all members keeps its
    /// previous position and may recapture points later.
    pub centroids: Tensor,
    /// Sum of squared distances to assigned centroids after each assignment
    /// step; Lloyd's algorithm makes this non-increasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first centroid uniform, then D^2-weighted picks.
fn plus_plus_init(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut dist2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining mass is zero (duplicate points); pick uniformly.
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in dist2.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), points.row(next)));
        }
    }
    let mut centroids = Tensor::zeros(k, points.cols());
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }
    centroids
}

/// Clusters `points` into `k` groups; stops early when assignments settle.
pub fn kmeans(points: &Tensor, k: usize, seed: u64, max_iter: usize) -> Result<KmeansFit> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range 1..={n}"
        )));
    }
    let mut rng = rng_from(&[seed, rng::tag::BAGGING]);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut objective_trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut objective = 0.0;
        let mut changed = false;
        for (i, p) in points.iter_rows().enumerate() {
            let (c, d) = nearest(p, &centroids);
            objective += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        objective_trace.push(objective);

        let mut sums = vec![vec![0.0; points.cols()]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter_rows().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids.set(c, j, s / counts[c] as f64);
                }
            }
        }

        if !changed && iterations > 1 {
            break;
        }
    }

    Ok(KmeansFit {
        assignments,
        centroids,
        objective_trace,
        iterations,
    })
}
