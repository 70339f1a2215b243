use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::OversampleError;
use crate::data::Matrix;
use crate::par::Exec;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig { k_neighbors: 5 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest other rows of `x` for every row, by Euclidean
/// distance with ties going to the lower index.
pub fn k_nearest(x: &Matrix, k: usize, exec: Exec) -> Vec<Vec<usize>> {
    exec.map_range(x.rows(), |i| {
        let mut d: Vec<(f64, usize)> = (0..x.rows())
            .filter(|&j| j != i)
            .map(|j| (sq_dist(x.row(i), x.row(j)), j))
            .collect();
        let k = k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
        }
        d.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().map(|(_, j)| j).collect()
    })
}

/// `base + lambda (neighbor - base)`.
pub fn smote_interpolate(base: &[f64], neighbor: &[f64], lambda: f64) -> Vec<f64> {
    base.iter().zip(neighbor).map(|(b, n)| b + lambda * (n - b)).collect()
}

/// Draws `n_synthetic` rows, each between a uniformly chosen minority row
/// and one of its `k` nearest minority neighbors.
pub fn smote_generate(x: &Matrix, cfg: &SmoteConfig, n_synthetic: usize, seed: u64, exec: Exec) -> Result<Matrix, OversampleError> {
    let k = cfg.k_neighbors;
    if k == 0 {
        return Err(OversampleError::Config("k_neighbors must be at least 1".into()));
    }
    if x.rows() == 0 {
        return Err(OversampleError::EmptyMinority);
    }
    if x.rows() <= k {
        return Err(OversampleError::TooFewMinoritySamples { rows: x.rows(), k });
    }
    let mut out = Matrix::empty(x.cols());
    if n_synthetic == 0 {
        return Ok(out);
    }
    let nn = k_nearest(x, k, exec);
    let mut r = rng::seeded(seed);
    for _ in 0..n_synthetic {
        let i = r.random_range(0..x.rows());
        let j = nn[i][r.random_range(0..k)];
        let lambda: f64 = r.random();
        out.push_row(&smote_interpolate(x.row(i), x.row(j), lambda))
            .expect("width matches");
    }
    Ok(out)
}
