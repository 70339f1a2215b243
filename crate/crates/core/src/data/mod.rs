//! Transaction datasets: CSV ingestion, cleaning, min-max scaling and
//! stratified splitting.

mod csv_io;
mod fixture;
mod scaler;
mod split;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to, Schema, CREDITCARD_LABEL};
pub use fixture::{blob_fixture, gaussian_pair, BlobFixture};
pub use scaler::{minmax_fit, minmax_transform, Normalization, ScalerParams};
pub use split::{stratified_split, SplitIndices};

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("parse error at data row {row}, column {col}: {value:?}")]
    Parse { row: usize, col: String, value: String },
    #[error("{0}: file has no header row")]
    EmptyFile(PathBuf),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("only one class present ({negatives} negatives, {positives} positives)")]
    SingleClass { negatives: usize, positives: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("width mismatch: expected {expected} columns, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if rows * cols != data.len() {
            return Err(DataError::WidthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn empty(cols: usize) -> Self {
        Matrix::zeros(0, cols)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::empty(cols);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield nothing.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), DataError> {
        if row.len() != self.cols {
            return Err(DataError::WidthMismatch {
                expected: self.cols,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.rows.max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Labeled transaction rows. Label 1 is fraud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
    pub synthetic_mask: Vec<bool>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::WidthMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if feature_names.len() != features.cols() {
            return Err(DataError::SchemaMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if let Some(bad) = labels.iter().position(|&l| l > 1) {
            return Err(DataError::Parse {
                row: bad,
                col: CREDITCARD_LABEL.into(),
                value: labels[bad].to_string(),
            });
        }
        let synthetic_mask = vec![false; labels.len()];
        Ok(Dataset {
            features,
            labels,
            feature_names,
            synthetic_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            synthetic_mask: idx.iter().map(|&i| self.synthetic_mask[i]).collect(),
        }
    }

    /// Feature rows of one class.
    pub fn class_rows(&self, label: u8) -> Matrix {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        self.features.select_rows(&idx)
    }

    pub fn n_synthetic(&self) -> usize {
        self.synthetic_mask.iter().filter(|&&s| s).count()
    }

    pub fn require_both_classes(&self) -> Result<(), DataError> {
        let (negatives, positives) = class_counts(self);
        if negatives == 0 || positives == 0 {
            return Err(DataError::SingleClass { negatives, positives });
        }
        Ok(())
    }
}

/// `(negatives, positives)`.
pub fn class_counts(d: &Dataset) -> (usize, usize) {
    let pos = d.labels.iter().filter(|&&l| l == 1).count();
    (d.len() - pos, pos)
}

/// Drops rows identical to an earlier row on every feature and the label.
pub fn deduplicate(d: &Dataset) -> Dataset {
    let mut seen = HashSet::with_capacity(d.len());
    let keep: Vec<usize> = (0..d.len())
        .filter(|&i| {
            let mut key: Vec<u64> = d.features.row(i).iter().map(|v| canonical_bits(*v)).collect();
            key.push(d.labels[i] as u64);
            seen.insert(key)
        })
        .collect();
    d.subset(&keep)
}

/// Bit pattern with -0.0 folded onto 0.0 so equal values compare equal.
pub(crate) fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

/// Stable 64-bit fingerprint of a feature row (FNV-1a over the bit patterns).
pub fn row_fingerprint(row: &[f64]) -> u64 {
    row.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        canonical_bits(*v)
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    })
}

#[cfg(test)]
mod tests;
