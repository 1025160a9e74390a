use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::{seeds, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 300,
        }
    }
}

/// Fitted centroids for one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Mat,
    pub variable_id: String,
    pub inertia: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Mat, x: ndarray::ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

impl ClusterModel {
    /// Cluster id of every row of `samples`.
    pub fn assign(&self, samples: &Mat) -> Vec<usize> {
        samples.rows().into_iter().map(|r| nearest(&self.centroids, r).0).collect()
    }
}

fn count_distinct(samples: &Mat, at_least: usize) -> usize {
    let mut seen = HashSet::new();
    for r in samples.rows() {
        seen.insert(r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
        if seen.len() >= at_least {
            break;
        }
    }
    seen.len()
}

fn plus_plus_init(samples: &Mat, k: usize, rng: &mut ChaCha8Rng) -> Mat {
    let n = samples.nrows();
    let mut centroids = Mat::zeros((k, samples.ncols()));
    centroids.row_mut(0).assign(&samples.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = samples.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&samples.row(pick));
        for (i, r) in samples.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd iterations from `centroids`; returns the final inertia.
fn lloyd(samples: &Mat, centroids: &mut Mat, max_iterations: usize) -> f64 {
    let (n, k) = (samples.nrows(), centroids.nrows());
    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    for _ in 0..max_iterations {
        let mut changed = false;
        for (i, r) in samples.rows().into_iter().enumerate() {
            let (c, d) = nearest(centroids, r);
            dist[i] = d;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, r) in samples.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assign[i]);
            s += &r;
            counts[assign[i]] += 1;
        }
        let mut taken = HashSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // Empty cluster: move it to the worst-served point.
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n >= k");
                taken.insert(far);
                centroids.row_mut(c).assign(&samples.row(far));
                dist[far] = 0.0;
            }
        }
    }
    samples.rows().into_iter().map(|r| nearest(centroids, r).1).sum()
}

/// K-means with k-means++ seeding, keeping the lowest-inertia restart.
pub fn fit_clusters(samples: &Mat, k: usize, seed: u64, variable_id: &str, cfg: &KMeansConfig) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering samples"));
    }
    let distinct = count_distinct(samples, k);
    if distinct < k {
        return Err(Error::InsufficientData(format!(
            "`{variable_id}` has {distinct} distinct samples, fewer than k = {k}"
        )));
    }
    let mut best: Option<(f64, Mat)> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, r as u64));
        let mut centroids = plus_plus_init(samples, k, &mut rng);
        let inertia = lloyd(samples, &mut centroids, cfg.max_iterations);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, centroids));
        }
    }
    let (inertia, centroids) = best.expect("at least one restart");
    Ok(ClusterModel {
        k,
        centroids,
        variable_id: variable_id.to_string(),
        inertia,
    })
}
