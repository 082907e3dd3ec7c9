use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::RealMat;

/// A numeric design matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: RealMat,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    /// `class_names[l]` is the raw label text mapped to class `l`.
    pub class_names: Vec<String>,
}

/// Reads a CSV with a header row and a column named `label`; every other
/// column must be numeric. Labels are mapped to `0..C` in sorted order
/// (numeric order when all labels parse as integers).
pub fn load_labeled_csv(path: &Path) -> Result<LabeledData> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let label_col = header
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| Error::Format(format!("{}: no `label` column", path.display())))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_col)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let mut raw_labels = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (i, field) in record.iter().enumerate() {
            let field = field.trim();
            if i == label_col {
                raw_labels.push(field.to_string());
            } else {
                values.push(field.parse::<f64>().map_err(|_| {
                    Error::Format(format!("row {}: `{field}` is not a number", row + 1))
                })?);
            }
        }
    }
    let mut names: Vec<String> = raw_labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().unwrap_or(0));
    }
    let labels = raw_labels
        .iter()
        .map(|l| names.iter().position(|n| n == l).unwrap_or(0))
        .collect();
    let features = RealMat::from_vec(raw_labels.len(), feature_names.len(), values)?;
    Ok(LabeledData {
        features,
        labels,
        feature_names,
        class_names: names,
    })
}

/// Reads a numeric CSV with a header row, splitting off the column named
/// `response`. Returns the remaining columns as the design matrix.
pub fn load_regression_csv(path: &Path, response: &str) -> Result<(RealMat, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let y_col = header
        .iter()
        .position(|h| h.trim() == response)
        .ok_or_else(|| Error::Format(format!("{}: no `{response}` column", path.display())))?;
    let mut y = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (i, field) in record.iter().enumerate() {
            let v = field.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!("row {}: `{}` is not a number", row + 1, field.trim()))
            })?;
            if i == y_col {
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let x = RealMat::from_vec(y.len(), header.len() - 1, values)?;
    Ok((x, y))
}

/// Rescales each column to zero mean and unit variance (constant columns
/// are only centred).
pub fn standardize_columns(m: &mut RealMat) {
    let (rows, cols) = (m.rows(), m.cols());
    if rows == 0 {
        return;
    }
    for c in 0..cols {
        let col = m.column(c);
        let mean = col.iter().sum::<f64>() / rows as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for (r, v) in col.iter().enumerate() {
            m.set(r, c, (v - mean) / scale);
        }
    }
}
