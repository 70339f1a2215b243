use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{grow_classifier, DecisionTree, TreeConfig};
use super::{check_width, require_both, ClassifierError, Scorer};
use crate::data::{Dataset, Matrix};
use crate::par::Exec;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(n_features))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
    pub max_features: usize,
    pub n_features: usize,
}

impl Scorer for RandomForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean leaf positive fraction across trees.
    fn score(&self, rows: &Matrix) -> Result<Vec<f64>, ClassifierError> {
        if self.trees.is_empty() {
            return Err(ClassifierError::EmptyEnsemble);
        }
        check_width(self.n_features, rows)?;
        let k = self.trees.len() as f64;
        Ok(rows
            .iter_rows()
            .map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / k)
            .collect())
    }
}

/// Each tree draws its bootstrap rows and split features from its own RNG
/// seeded by `(seed, tree_index)`, so the forest is identical whatever the
/// execution order.
pub fn rf_train(d: &Dataset, cfg: &RfConfig, seed: u64, exec: Exec) -> Result<RandomForestModel, ClassifierError> {
    require_both(d)?;
    if cfg.n_trees == 0 {
        return Err(ClassifierError::Config("n_trees must be at least 1".into()));
    }
    let k = d.n_features();
    let m = cfg.max_features.unwrap_or_else(|| (k as f64).sqrt().floor() as usize).clamp(1, k.max(1));
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_samples_leaf: cfg.min_samples_leaf,
        max_features: Some(m),
    };
    let n = d.len();
    let tree_seeds: Vec<u64> = (0..cfg.n_trees as u64).map(|i| rng::derive_seed(seed, i)).collect();
    let trees = exec.map_slice(&tree_seeds, |&s| {
        let mut r = rng::seeded(s);
        let rows: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| r.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        grow_classifier(&d.features, &d.labels, &rows, &tree_cfg, &mut r)
    });
    Ok(RandomForestModel {
        trees,
        tree_seeds,
        max_features: m,
        n_features: k,
    })
}
