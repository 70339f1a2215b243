use serde::{Deserialize, Serialize};

use super::tree::{midpoint, DecisionTree, Node};
use super::{check_width, require_both, sigmoid, ClassifierError, Scorer};
use crate::data::{Dataset, Matrix};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub eta: f64,
    pub max_depth: usize,
    pub lambda: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_rounds: 200,
            eta: 0.1,
            max_depth: 4,
            lambda: 1.0,
            min_child_weight: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<DecisionTree>,
    pub eta: f64,
    pub base_score: f64,
    pub lambda: f64,
    pub n_features: usize,
}

impl GbtModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.eta * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }
}

impl Scorer for GbtModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, rows: &Matrix) -> Result<Vec<f64>, ClassifierError> {
        if self.trees.is_empty() {
            return Err(ClassifierError::EmptyEnsemble);
        }
        check_width(self.n_features, rows)?;
        Ok(rows.iter_rows().map(|r| sigmoid(self.margin(r))).collect())
    }
}

const BASE_EPS: f64 = 1e-6;

/// Log-odds of the positive rate, clamped away from 0 and 1.
pub fn base_score(labels: &[u8]) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len().max(1) as f64;
    let p = p.clamp(BASE_EPS, 1.0 - BASE_EPS);
    (p / (1.0 - p)).ln()
}

fn log_loss(margins: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            // softplus(m) - y m, written to avoid overflow
            let sp = m.max(0.0) + (-m.abs()).exp().ln_1p();
            sp - y as f64 * m
        })
        .sum();
    total / margins.len() as f64
}

fn gain_term(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Column-major copy with every column's row order presorted once.
struct Presorted {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Presorted {
    fn new(x: &Matrix, exec: Exec) -> Self {
        let columns: Vec<Vec<f64>> = (0..x.cols()).map(|c| x.column(c)).collect();
        let order = exec.map_slice(&columns, |col| {
            let mut idx: Vec<u32> = (0..col.len() as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        });
        Presorted { columns, order }
    }
}

/// Best split for every active node along one feature, scanning its
/// presorted order once.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    f: usize,
    ps: &Presorted,
    node_of: &[u32],
    slot: &[u32],
    totals: &[(f64, f64)],
    g: &[f64],
    h: &[f64],
    cfg: &GbtConfig,
) -> Vec<Option<Candidate>> {
    let k = totals.len();
    let col = &ps.columns[f];
    let mut gl = vec![0.0; k];
    let mut hl = vec![0.0; k];
    let mut last: Vec<Option<f64>> = vec![None; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    for &r in &ps.order[f] {
        let r = r as usize;
        let j = slot[node_of[r] as usize];
        if j == u32::MAX {
            continue;
        }
        let j = j as usize;
        let v = col[r];
        if let Some(prev) = last[j] {
            if v > prev {
                let (gt, ht) = totals[j];
                let (gr, hr) = (gt - gl[j], ht - hl[j]);
                if hl[j] >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                    let gain = 0.5
                        * (gain_term(gl[j], hl[j], cfg.lambda) + gain_term(gr, hr, cfg.lambda)
                            - gain_term(gt, ht, cfg.lambda));
                    if best[j].is_none_or(|b| gain > b.gain) {
                        best[j] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold: midpoint(prev, v),
                        });
                    }
                }
            }
        }
        gl[j] += g[r];
        hl[j] += h[r];
        last[j] = Some(v);
    }
    best
}

/// Level-wise exact greedy regression tree on gradients `g` and hessians
/// `h`. Returns the tree and each training row's leaf index.
fn grow_boosting_tree(ps: &Presorted, g: &[f64], h: &[f64], cfg: &GbtConfig, exec: Exec) -> (DecisionTree, Vec<u32>) {
    let n = g.len();
    let n_features = ps.columns.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut node_of = vec![0u32; n];
    let mut active: Vec<usize> = vec![0];
    for depth in 0..=cfg.max_depth {
        let mut slot = vec![u32::MAX; nodes.len()];
        for (j, &node) in active.iter().enumerate() {
            slot[node] = j as u32;
        }
        let mut totals = vec![(0.0, 0.0); active.len()];
        for r in 0..n {
            let j = slot[node_of[r] as usize];
            if j != u32::MAX {
                totals[j as usize].0 += g[r];
                totals[j as usize].1 += h[r];
            }
        }
        for (j, &node) in active.iter().enumerate() {
            let (gt, ht) = totals[j];
            nodes[node] = Node::Leaf {
                value: -gt / (ht + cfg.lambda),
            };
        }
        if depth == cfg.max_depth {
            break;
        }
        let per_feature = exec.map_range(n_features, |f| scan_feature(f, ps, &node_of, &slot, &totals, g, h, cfg));
        let mut next = Vec::new();
        let mut split_of: Vec<Option<(usize, f64, u32, u32)>> = vec![None; nodes.len()];
        for (j, &node) in active.iter().enumerate() {
            // Features in index order, so the lowest index keeps a tie.
            let mut best: Option<Candidate> = None;
            for cands in &per_feature {
                if let Some(c) = cands[j] {
                    if best.is_none_or(|b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            let Some(c) = best.filter(|c| c.gain > 0.0) else { continue };
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[node] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            };
            split_of[node] = Some((c.feature, c.threshold, left as u32, right as u32));
            next.extend([left, right]);
        }
        if next.is_empty() {
            break;
        }
        for r in 0..n {
            if let Some((f, t, l, rt)) = split_of[node_of[r] as usize] {
                node_of[r] = if ps.columns[f][r] <= t { l } else { rt };
            }
        }
        active = next;
    }
    (DecisionTree { nodes, n_features }, node_of)
}

pub fn gbt_train(d: &Dataset, cfg: &GbtConfig, exec: Exec) -> Result<GbtModel, ClassifierError> {
    gbt_train_traced(d, cfg, exec).map(|(m, _)| m)
}

/// Second-order log-loss boosting. Also returns the mean training log-loss
/// before the first round and after every round.
pub fn gbt_train_traced(d: &Dataset, cfg: &GbtConfig, exec: Exec) -> Result<(GbtModel, Vec<f64>), ClassifierError> {
    require_both(d)?;
    if cfg.lambda.is_nan() || cfg.lambda < 0.0 || cfg.eta.is_nan() || cfg.eta <= 0.0 {
        return Err(ClassifierError::Config(format!(
            "need eta > 0 and lambda >= 0, got eta {} lambda {}",
            cfg.eta, cfg.lambda
        )));
    }
    let n = d.len();
    let base = base_score(&d.labels);
    let ps = Presorted::new(&d.features, exec);
    let mut margins = vec![base; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trace = vec![log_loss(&margins, &d.labels)];
    let mut trees = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            g[i] = p - d.labels[i] as f64;
            h[i] = p * (1.0 - p);
        }
        let (tree, leaf_of) = grow_boosting_tree(&ps, &g, &h, cfg, exec);
        for (m, &leaf) in margins.iter_mut().zip(&leaf_of) {
            if let Node::Leaf { value } = tree.nodes[leaf as usize] {
                *m += cfg.eta * value;
            }
        }
        trace.push(log_loss(&margins, &d.labels));
        trees.push(tree);
    }
    Ok((
        GbtModel {
            trees,
            eta: cfg.eta,
            base_score: base,
            lambda: cfg.lambda,
            n_features: d.n_features(),
        },
        trace,
    ))
}
