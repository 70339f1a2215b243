use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

/// Which feature columns get min-max scaled.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// `Amount` and `Time` only; the PCA columns are already comparable.
    #[default]
    AmountTime,
    All,
    Columns(Vec<String>),
}

impl Normalization {
    pub fn columns(&self, feature_names: &[String]) -> Vec<String> {
        match self {
            Normalization::None => vec![],
            Normalization::AmountTime => vec!["Amount".into(), "Time".into()],
            Normalization::All => feature_names.to_vec(),
            Normalization::Columns(c) => c.clone(),
        }
    }
}

/// Per-column minimum and maximum, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

fn column_index(d: &Dataset, name: &str) -> Result<usize, DataError> {
    d.feature_names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| DataError::SchemaMismatch(format!("no column named {name:?}")))
}

pub fn minmax_fit(d: &Dataset, columns: &[String]) -> Result<ScalerParams, DataError> {
    if d.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut min = Vec::with_capacity(columns.len());
    let mut max = Vec::with_capacity(columns.len());
    for name in columns {
        let c = column_index(d, name)?;
        let (lo, hi) = d
            .features
            .iter_rows()
            .map(|r| r[c])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        min.push(lo);
        max.push(hi);
    }
    Ok(ScalerParams {
        columns: columns.to_vec(),
        min,
        max,
    })
}

/// `(x - min) / (max - min)` without clipping; constant columns map to 0.
pub fn minmax_transform(d: &Dataset, s: &ScalerParams) -> Result<Dataset, DataError> {
    let mut out = d.clone();
    for (k, name) in s.columns.iter().enumerate() {
        let c = column_index(d, name)?;
        let (lo, hi) = (s.min[k], s.max[k]);
        let span = hi - lo;
        for r in 0..out.len() {
            let v = out.features.get(r, c);
            out.features.set(r, c, if span > 0.0 { (v - lo) / span } else { 0.0 });
        }
    }
    Ok(out)
}
