use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_width, require_both, sigmoid, ClassifierError, Scorer};
use crate::data::{Dataset, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 40,
            lr: 0.1,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub c: f64,
}

impl LinearSvmModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.weights.iter().zip(row).map(|(&w, x)| w as f64 * x).sum::<f64>() + self.bias as f64
    }
}

impl Scorer for LinearSvmModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    /// Margins squashed through a sigmoid, so margin 0 sits at 0.5.
    fn score(&self, rows: &Matrix) -> Result<Vec<f64>, ClassifierError> {
        check_width(self.weights.len(), rows)?;
        Ok(rows.iter_rows().map(|r| sigmoid(self.margin(r))).collect())
    }
}

pub fn hinge(margin: f64) -> f64 {
    (1.0 - margin).max(0.0)
}

/// Minimizes `0.5 |w|^2 + C sum hinge(y (w x + b))` by mini-batch
/// subgradient steps on the same objective divided by `C n`.
///
/// The L2 part is applied as a proximal step, `w / (1 + eta lambda)`, which
/// stays stable however small `C` gets.
pub fn svm_train(d: &Dataset, cfg: &SvmConfig, seed: u64) -> Result<LinearSvmModel, ClassifierError> {
    if cfg.c.is_nan() || cfg.c <= 0.0 {
        return Err(ClassifierError::Config(format!("C must be positive, got {}", cfg.c)));
    }
    if cfg.batch_size == 0 {
        return Err(ClassifierError::Config("batch_size must be at least 1".into()));
    }
    require_both(d)?;
    let n = d.len();
    let k = d.n_features();
    let lambda = 1.0 / (cfg.c * n as f64);
    let mut w = vec![0.0f64; k];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(seed);
    let mut gw = vec![0.0f64; k];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let eta = cfg.lr / (1.0 + epoch as f64).sqrt();
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for &i in batch {
                let row = d.features.row(i);
                let y = if d.labels[i] == 1 { 1.0 } else { -1.0 };
                let m = y * (w.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + b);
                if m < 1.0 {
                    for (g, x) in gw.iter_mut().zip(row) {
                        *g -= y * x;
                    }
                    gb -= y;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let shrink = 1.0 / (1.0 + eta * lambda);
            for (a, g) in w.iter_mut().zip(&gw) {
                *a = (*a - eta * g * inv) * shrink;
            }
            b -= eta * gb * inv;
        }
    }
    Ok(LinearSvmModel {
        weights: w.iter().map(|&v| v as f32).collect(),
        bias: b as f32,
        c: cfg.c,
    })
}
