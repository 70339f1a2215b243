//! Confusion-matrix metrics and rank-based ROC-AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("AUC needs both classes ({negatives} negatives, {positives} positives)")]
    SingleClass { negatives: usize, positives: usize },
    #[error("label {0} at row {1} is not 0 or 1")]
    BadLabel(u8, usize),
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    match labels.iter().position(|&l| l > 1) {
        Some(i) => Err(MetricsError::BadLabel(labels[i], i)),
        None => Ok(()),
    }
}

/// A row is predicted positive iff `score >= t`.
pub fn confusion_at_threshold(scores: &[f64], labels: &[u8], t: f64) -> Result<ConfusionMatrix, MetricsError> {
    check(scores, labels)?;
    let mut c = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(c: &ConfusionMatrix) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionMatrix) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn accuracy(c: &ConfusionMatrix) -> f64 {
    ratio(c.tp + c.tn, c.total())
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1(c: &ConfusionMatrix) -> f64 {
    f1_from(precision(c), recall(c))
}

/// Mann-Whitney AUC with average ranks for ties.
///
/// Ranks are kept doubled so tied groups stay integral; the result is
/// `(2 R+ - n+ (n+ + 1)) / (2 n+ n-)` evaluated from exact integers.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass {
            negatives: n_neg as usize,
            positives: n_pos as usize,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j average to (i+1+j)/2.
        let doubled = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        doubled_rank_sum += doubled * pos_in_group;
        i = j;
    }
    let num = doubled_rank_sum - n_pos * (n_pos + 1);
    let den = 2 * n_pos * n_neg;
    Ok(num as f64 / den as f64)
}

/// Which metrics hit a 0/0 case and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub auc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub classifier: String,
    pub seed: u64,
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: ConfusionMatrix,
    pub degenerate: DegenerateFlags,
}

impl MetricsReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            "auc" => Some(self.auc),
            _ => None,
        }
    }
}

pub const METRIC_NAMES: [&str; 5] = ["auc", "precision", "recall", "f1", "accuracy"];

/// A single-class test set gets AUC 0 with its degenerate flag set.
pub fn report(
    method: &str,
    classifier: &str,
    seed: u64,
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    let c = confusion_at_threshold(scores, labels, threshold)?;
    let (p, r) = (precision(&c), recall(&c));
    let (auc, auc_degenerate) = match roc_auc(scores, labels) {
        Ok(a) => (a, false),
        Err(MetricsError::SingleClass { .. }) => (0.0, true),
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        method: method.into(),
        classifier: classifier.into(),
        seed,
        threshold,
        accuracy: accuracy(&c),
        precision: p,
        recall: r,
        f1: f1_from(p, r),
        auc,
        confusion: c,
        degenerate: DegenerateFlags {
            precision: c.tp + c.fp == 0,
            recall: c.tp + c.fn_ == 0,
            f1: p + r == 0.0,
            auc: auc_degenerate,
        },
    })
}
