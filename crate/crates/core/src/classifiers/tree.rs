use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{check_width, ClassifierError};
use crate::data::Matrix;
use crate::rng::Rng;

/// One entry of a flat node table. Rows with `x[feature] <= threshold` go
/// left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary tree stored as a node table rooted at index 0. Classification
/// trees keep the positive fraction in their leaves; boosting trees keep
/// the leaf weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl DecisionTree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    pub fn predict(&self, rows: &Matrix) -> Result<Vec<f64>, ClassifierError> {
        check_width(self.n_features, rows)?;
        Ok(rows.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Structural check: children point forward, every node is reached once.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return false;
            }
            seen[i] = true;
            if let Node::Split { left, right, feature, .. } = self.nodes[i] {
                if left <= i || right <= i || feature >= self.n_features {
                    return false;
                }
                stack.extend([left, right]);
            }
        }
        seen.iter().all(|&s| s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn per split; `None` means all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 12,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

/// Gini impurity of a node with the given class counts.
pub fn gini(negatives: usize, positives: usize) -> f64 {
    let n = (negatives + positives) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (negatives as f64 / n, positives as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

/// Purity score of a split, kept as an exact fraction.
///
/// `n * weighted_gini = n - (l0^2 + l1^2) / nl - (r0^2 + r1^2) / nr`, so
/// minimizing weighted Gini means maximizing the subtracted terms. Comparing
/// them as integer fractions makes ties exact.
#[derive(Debug, Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn split(l: [u64; 2], r: [u64; 2]) -> Self {
        let (nl, nr) = ((l[0] + l[1]) as u128, (r[0] + r[1]) as u128);
        let sl = (l[0] as u128).pow(2) + (l[1] as u128).pow(2);
        let sr = (r[0] as u128).pow(2) + (r[1] as u128).pow(2);
        Purity {
            num: sl * nr + sr * nl,
            den: nl * nr,
        }
    }

    fn node(c: [u64; 2]) -> Self {
        Purity {
            num: (c[0] as u128).pow(2) + (c[1] as u128).pow(2),
            den: (c[0] + c[1]) as u128,
        }
    }

    fn cmp(&self, other: &Purity) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Threshold strictly below `hi` so that `hi` still goes right.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

pub(crate) fn feature_subset(n_features: usize, max_features: Option<usize>, rng: &mut Rng) -> Vec<usize> {
    match max_features {
        Some(m) if m < n_features => {
            let mut f = index::sample(rng, n_features, m.max(1)).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..n_features).collect(),
    }
}

/// Best `(feature, threshold)` by weighted Gini over midpoints of sorted
/// unique values. Earlier features and lower thresholds win ties. `None`
/// when no split lowers impurity.
pub(crate) fn best_gini_split(
    x: &Matrix,
    y: &[u8],
    rows: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<(usize, f64)> {
    let mut total = [0u64; 2];
    for &r in rows {
        total[y[r] as usize] += 1;
    }
    let n = rows.len();
    let parent = Purity::node(total);
    let mut best: Option<(Purity, usize, f64)> = None;
    let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
    for &f in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x.get(r, f), y[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; 2];
        for i in 0..n - 1 {
            left[pairs[i].1 as usize] += 1;
            let nl = i + 1;
            if pairs[i].0 == pairs[i + 1].0 || nl < min_samples_leaf || n - nl < min_samples_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let p = Purity::split(left, right);
            if best.as_ref().is_none_or(|(b, _, _)| p.cmp(b) == Ordering::Greater) {
                best = Some((p, f, midpoint(pairs[i].0, pairs[i + 1].0)));
            }
        }
    }
    best.filter(|(p, _, _)| p.cmp(&parent) == Ordering::Greater)
        .map(|(_, f, t)| (f, t))
}

/// Grows a classification tree on `rows` (repeats allowed, as in a
/// bootstrap sample).
pub(crate) fn grow_classifier(x: &Matrix, y: &[u8], rows: &[usize], cfg: &TreeConfig, rng: &mut Rng) -> DecisionTree {
    let mut nodes = Vec::new();
    grow_node(x, y, rows.to_vec(), 0, cfg, rng, &mut nodes);
    DecisionTree {
        nodes,
        n_features: x.cols(),
    }
}

fn grow_node(x: &Matrix, y: &[u8], rows: Vec<usize>, depth: usize, cfg: &TreeConfig, rng: &mut Rng, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    let positives = rows.iter().filter(|&&r| y[r] == 1).count();
    let leaf = Node::Leaf {
        value: positives as f64 / rows.len() as f64,
    };
    nodes.push(leaf.clone());
    let pure = positives == 0 || positives == rows.len();
    if pure || depth >= cfg.max_depth || rows.len() < 2 * cfg.min_samples_leaf.max(1) {
        return id;
    }
    let features = feature_subset(x.cols(), cfg.max_features, rng);
    let Some((feature, threshold)) = best_gini_split(x, y, &rows, &features, cfg.min_samples_leaf.max(1)) else {
        return id;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, feature) <= threshold);
    drop(rows);
    let left = grow_node(x, y, l, depth + 1, cfg, rng, nodes);
    let right = grow_node(x, y, r, depth + 1, cfg, rng, nodes);
    nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

/// Greedy CART with Gini impurity over all rows.
pub fn tree_train(x: &Matrix, y: &[u8], cfg: &TreeConfig, rng: &mut Rng) -> Result<DecisionTree, ClassifierError> {
    if x.rows() == 0 {
        return Err(ClassifierError::EmptyData);
    }
    if x.rows() != y.len() {
        return Err(ClassifierError::WidthMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    let rows: Vec<usize> = (0..x.rows()).collect();
    Ok(grow_classifier(x, y, &rows, cfg, rng))
}
