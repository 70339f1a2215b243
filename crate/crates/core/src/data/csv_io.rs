use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Matrix};

pub const CREDITCARD_LABEL: &str = "Class";

/// Expected header layout of an input CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    /// `Time,V1..V28,Amount,Class`, order-sensitive.
    #[default]
    Creditcard,
    /// Any unique feature names followed by a final `Class` column.
    Generic,
}

impl Schema {
    pub fn creditcard_features() -> Vec<String> {
        let mut cols = vec!["Time".to_string()];
        cols.extend((1..=28).map(|i| format!("V{i}")));
        cols.push("Amount".into());
        cols
    }

    fn validate(self, header: &[String]) -> Result<Vec<String>, DataError> {
        match self {
            Schema::Creditcard => {
                let mut expected = Self::creditcard_features();
                expected.push(CREDITCARD_LABEL.into());
                if header != expected.as_slice() {
                    return Err(DataError::HeaderMismatch {
                        expected,
                        found: header.to_vec(),
                    });
                }
            }
            Schema::Generic => {
                let features = &header[..header.len().saturating_sub(1)];
                let mut seen = std::collections::HashSet::new();
                let ok = header.last().map(String::as_str) == Some(CREDITCARD_LABEL)
                    && !features.is_empty()
                    && features.iter().all(|n| !n.is_empty() && n != CREDITCARD_LABEL && seen.insert(n));
                if !ok {
                    let mut expected: Vec<String> = features.to_vec();
                    expected.push(CREDITCARD_LABEL.into());
                    return Err(DataError::HeaderMismatch {
                        expected,
                        found: header.to_vec(),
                    });
                }
            }
        }
        Ok(header[..header.len() - 1].to_vec())
    }
}

pub fn load_csv(path: &Path, schema: Schema) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema, path)
}

/// Parses a labeled CSV. `origin` only labels error messages.
pub fn read_csv<R: Read>(reader: R, schema: Schema, origin: &Path) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec?.iter().map(|s| s.trim().to_string()).collect(),
        None => return Err(DataError::EmptyFile(origin.to_path_buf())),
    };
    let names = schema.validate(&header)?;
    let width = names.len();

    let mut features = Matrix::empty(width);
    let mut labels = Vec::new();
    let mut row = vec![0.0; width];
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != width + 1 {
            return Err(DataError::WidthMismatch {
                expected: width + 1,
                got: rec.len(),
            });
        }
        for (c, field) in rec.iter().take(width).enumerate() {
            row[c] = parse_field(field).ok_or_else(|| DataError::Parse {
                row: r,
                col: names[c].clone(),
                value: field.to_string(),
            })?;
        }
        let label_field = &rec[width];
        let label = match parse_field(label_field) {
            Some(0.0) => 0,
            Some(1.0) => 1,
            _ => {
                return Err(DataError::Parse {
                    row: r,
                    col: CREDITCARD_LABEL.into(),
                    value: label_field.to_string(),
                })
            }
        };
        features.push_row(&row)?;
        labels.push(label);
    }
    Dataset::new(features, labels, names)
}

fn parse_field(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn write_csv(d: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_to(d, file)
}

/// Writes features with shortest round-trip float formatting, then `Class`.
pub fn write_csv_to<W: Write>(d: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header = d.feature_names.clone();
    header.push(CREDITCARD_LABEL.into());
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for (row, label) in d.features.iter_rows().zip(&d.labels) {
        fields.clear();
        fields.extend(row.iter().map(|v| v.to_string()));
        fields.push(label.to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.into()))?;
    Ok(())
}
