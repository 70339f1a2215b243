//! Minority-class synthesizers: SMOTE, a tabular VAE and a GAN whose
//! generator runs a Transformer over per-feature tokens.

mod gan;
mod smote;
mod tvae;

pub use gan::{gan_sample, gan_train, GanConfig, GanTransformerModel};
pub use smote::{k_nearest, smote_generate, smote_interpolate, SmoteConfig};
pub use tvae::{kl_standard_normal, tvae_sample, tvae_train, TvaeConfig, TvaeModel};

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Matrix};
use crate::nn::NnError;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum OversampleError {
    #[error("minority set is empty")]
    EmptyMinority,
    #[error("{rows} minority rows is too few for k = {k} neighbors")]
    TooFewMinoritySamples { rows: usize, k: usize },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    DivergenceDetected { epoch: usize, trace: TrainTrace },
    #[error("synthetic rows have {got} columns, dataset has {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<TensorError> for OversampleError {
    fn from(e: TensorError) -> Self {
        OversampleError::Nn(NnError::Tensor(e))
    }
}

/// Per-epoch loss columns of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub columns: Vec<String>,
    pub epochs: Vec<Vec<f64>>,
}

impl TrainTrace {
    pub fn new(columns: &[&str]) -> Self {
        TrainTrace {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            epochs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.epochs.iter().map(|row| row[c]).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.epochs.iter().flatten().all(|v| v.is_finite())
    }

    /// `epoch,<columns...>` with one line per epoch, counted from 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["epoch".to_string()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header)?;
        for (i, row) in self.epochs.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

/// Minority rows shuffled into batches of `batch` for one epoch.
///
/// An epoch covers at least `min_rows` draws: the minority is cycled
/// through fresh permutations until the budget is filled, so a tiny
/// minority still gets a useful number of updates.
pub(crate) fn epoch_batches(n: usize, batch: usize, min_rows: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let steps = n.max(min_rows).div_ceil(batch).max(1);
    let mut order = Vec::with_capacity(steps * batch);
    while order.len() < steps * batch {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        order.extend(perm);
    }
    order.truncate(steps * batch);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

pub(crate) fn gather(x: &Matrix, rows: &[usize]) -> Tensor {
    let data = rows.iter().flat_map(|&r| x.row(r).iter().map(|&v| v as f32)).collect();
    Tensor::new(vec![rows.len(), x.cols()], data).expect("row width")
}

pub(crate) fn standard_normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub(crate) fn tensor_to_matrix(t: &Tensor, out: &mut Matrix) {
    let cols = out.cols();
    for row in t.data().chunks_exact(cols) {
        let r: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        out.push_row(&r).expect("width matches");
    }
}

/// Appends `synthetic` rows labeled positive and flagged synthetic. Only
/// ever called on a training split.
pub fn augment_dataset(d: &Dataset, synthetic: &Matrix) -> Result<Dataset, OversampleError> {
    if synthetic.cols() != d.n_features() {
        return Err(OversampleError::WidthMismatch {
            expected: d.n_features(),
            got: synthetic.cols(),
        });
    }
    let mut out = d.clone();
    for row in synthetic.iter_rows() {
        out.features.push_row(row).expect("width checked");
        out.labels.push(1);
        out.synthetic_mask.push(true);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Original,
    Smote,
    GanTransformer,
    Tvae,
    External,
}

impl Method {
    pub const BUILTIN: [Method; 4] = [Method::Original, Method::Smote, Method::GanTransformer, Method::Tvae];

    pub fn name(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Smote => "smote",
            Method::GanTransformer => "gan_transformer",
            Method::Tvae => "tvae",
            Method::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Method::Original, Method::Smote, Method::GanTransformer, Method::Tvae, Method::External]
            .into_iter()
            .find(|m| m.name() == s)
    }

    /// Whether the method produces synthetic rows.
    pub fn is_synthetic(self) -> bool {
        self != Method::Original
    }
}
