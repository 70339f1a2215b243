//! The four downstream classifiers. Each maps feature rows to scores in
//! `[0, 1]`, which is all the metrics layer consumes.

mod forest;
mod gbt;
mod logistic;
mod svm;
mod tree;

pub use forest::{rf_train, RandomForestModel, RfConfig};
pub use gbt::{base_score, gbt_train, gbt_train_traced, GbtConfig, GbtModel};
pub use logistic::{lr_loss, lr_train, LogisticModel, LrConfig};
pub use svm::{hinge, svm_train, LinearSvmModel, SvmConfig};
pub use tree::{gini, tree_train, DecisionTree, Node, TreeConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{class_counts, Dataset, Matrix};
use crate::par::Exec;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("only one class present ({negatives} negatives, {positives} positives)")]
    SingleClass { negatives: usize, positives: usize },
    #[error("no training rows")]
    EmptyData,
    #[error("model expects {expected} features, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("ensemble has no trees")]
    EmptyEnsemble,
    #[error("invalid hyperparameter: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub trait Scorer {
    fn n_features(&self) -> usize;

    /// One score in `[0, 1]` per row; higher means more likely fraud.
    fn score(&self, rows: &Matrix) -> Result<Vec<f64>, ClassifierError>;
}

pub(crate) fn check_width(expected: usize, rows: &Matrix) -> Result<(), ClassifierError> {
    if rows.cols() != expected {
        return Err(ClassifierError::WidthMismatch {
            expected,
            got: rows.cols(),
        });
    }
    Ok(())
}

pub(crate) fn require_both(d: &Dataset) -> Result<(), ClassifierError> {
    let (negatives, positives) = class_counts(d);
    if negatives == 0 || positives == 0 {
        return Err(ClassifierError::SingleClass { negatives, positives });
    }
    Ok(())
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Lr,
    Rf,
    Gbt,
    Svm,
}

impl ClassifierKind {
    /// Table row order.
    pub const ALL: [ClassifierKind; 4] = [ClassifierKind::Lr, ClassifierKind::Rf, ClassifierKind::Gbt, ClassifierKind::Svm];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Lr => "lr",
            ClassifierKind::Rf => "rf",
            ClassifierKind::Gbt => "gbt",
            ClassifierKind::Svm => "svm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ClassifierKind::Lr => "Logistic Regression",
            ClassifierKind::Rf => "Random Forest",
            ClassifierKind::Gbt => "Gradient Boosting (XGBoost-style)",
            ClassifierKind::Svm => "Linear SVM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Hyperparameters for every classifier in one place.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfigs {
    pub lr: LrConfig,
    pub svm: SvmConfig,
    pub rf: RfConfig,
    pub gbt: GbtConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Lr(LogisticModel),
    Svm(LinearSvmModel),
    Rf(RandomForestModel),
    Gbt(GbtModel),
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Lr(_) => ClassifierKind::Lr,
            Classifier::Svm(_) => ClassifierKind::Svm,
            Classifier::Rf(_) => ClassifierKind::Rf,
            Classifier::Gbt(_) => ClassifierKind::Gbt,
        }
    }

    fn inner(&self) -> &dyn Scorer {
        match self {
            Classifier::Lr(m) => m,
            Classifier::Svm(m) => m,
            Classifier::Rf(m) => m,
            Classifier::Gbt(m) => m,
        }
    }
}

impl Scorer for Classifier {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn score(&self, rows: &Matrix) -> Result<Vec<f64>, ClassifierError> {
        self.inner().score(rows)
    }
}

pub fn train(kind: ClassifierKind, d: &Dataset, cfg: &ClassifierConfigs, seed: u64, exec: Exec) -> Result<Classifier, ClassifierError> {
    Ok(match kind {
        ClassifierKind::Lr => Classifier::Lr(lr_train(d, &cfg.lr)?),
        ClassifierKind::Svm => Classifier::Svm(svm_train(d, &cfg.svm, seed)?),
        ClassifierKind::Rf => Classifier::Rf(rf_train(d, &cfg.rf, seed, exec)?),
        ClassifierKind::Gbt => Classifier::Gbt(gbt_train(d, &cfg.gbt, exec)?),
    })
}
