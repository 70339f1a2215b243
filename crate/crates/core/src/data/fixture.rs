use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Matrix};
use crate::rng;

/// Desk-scale stand-in for the credit-card data: two isotropic unit-variance
/// Gaussians whose means lie `separation` standard deviations apart along
/// the all-ones direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobFixture {
    pub n_negative: usize,
    pub n_positive: usize,
    pub n_features: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobFixture {
    fn default() -> Self {
        BlobFixture {
            n_negative: 10_000,
            n_positive: 50,
            n_features: 8,
            separation: 2.0,
            seed: 20_240_917,
        }
    }
}

impl BlobFixture {
    pub fn positive_mean(&self) -> Vec<f64> {
        vec![self.separation / (self.n_features as f64).sqrt(); self.n_features]
    }
}

fn sample_class(r: &mut rng::Rng, n: usize, mean: &[f64], m: &mut Matrix, labels: &mut Vec<u8>, label: u8) {
    let mut row = vec![0.0; mean.len()];
    for _ in 0..n {
        for (v, mu) in row.iter_mut().zip(mean) {
            let z: f64 = StandardNormal.sample(r);
            *v = mu + z;
        }
        m.push_row(&row).expect("row width fixed");
        labels.push(label);
    }
}

fn names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("f{i}")).collect()
}

pub fn blob_fixture(cfg: &BlobFixture) -> Dataset {
    let mut r = rng::seeded(cfg.seed);
    let mut m = Matrix::empty(cfg.n_features);
    let mut labels = Vec::with_capacity(cfg.n_negative + cfg.n_positive);
    sample_class(&mut r, cfg.n_negative, &vec![0.0; cfg.n_features], &mut m, &mut labels, 0);
    sample_class(&mut r, cfg.n_positive, &cfg.positive_mean(), &mut m, &mut labels, 1);
    Dataset::new(m, labels, names(cfg.n_features)).expect("consistent fixture")
}

/// Balanced two-Gaussian set: class 0 at the origin, class 1 offset by
/// `offset` standard deviations in every coordinate.
pub fn gaussian_pair(n_each: usize, n_features: usize, offset: f64, seed: u64) -> Dataset {
    let mut r = rng::seeded(seed);
    let mut m = Matrix::empty(n_features);
    let mut labels = Vec::with_capacity(2 * n_each);
    sample_class(&mut r, n_each, &vec![0.0; n_features], &mut m, &mut labels, 0);
    sample_class(&mut r, n_each, &vec![offset; n_features], &mut m, &mut labels, 1);
    Dataset::new(m, labels, names(n_features)).expect("consistent fixture")
}
