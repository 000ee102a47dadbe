//! CSV ingestion: column type detection and label encoding.
//!
//! A column whose every non-empty cell parses as a float becomes numeric
//! (empty cells become NaN, which preprocessing later zeroes). Any other
//! column is categorical, with the empty string acting as its own
//! category. The label column is pulled out separately: classification
//! assigns ids to the distinct values (sorted numerically when they all
//! parse, lexicographically otherwise), regression requires floats.

use std::path::Path;

use lintab::pipeline::{Column, Table};

use crate::error::{CliError, CliResult};

/// A parsed dataset: feature table plus the extracted label column.
#[derive(Debug)]
pub struct Dataset {
    pub table: Table,
    pub feature_names: Vec<String>,
    pub labels: LabelColumn,
}

#[derive(Debug)]
pub enum LabelColumn {
    /// Classification labels: `ids[row]` indexes into `names`.
    Classes { ids: Vec<usize>, names: Vec<String> },
    /// Regression targets.
    Reals(Vec<f64>),
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }
}

pub fn load_dataset(path: &Path, label: &str, regression: bool) -> CliResult<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::runtime(format!("cannot read {} header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();

    let label_idx = headers.iter().position(|h| h == label).ok_or_else(|| {
        CliError::usage(format!(
            "label column {label:?} not found in {}; available columns: {}",
            path.display(),
            headers.join(", ")
        ))
    })?;

    let mut cells: Vec<Vec<String>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::runtime(format!("{} row {}: {e}", path.display(), row + 2)))?;
        if record.len() != headers.len() {
            return Err(CliError::runtime(format!(
                "{} row {}: expected {} fields, found {}",
                path.display(),
                row + 2,
                headers.len(),
                record.len()
            )));
        }
        cells.push(record.iter().map(|c| c.trim().to_string()).collect());
    }
    if cells.len() < 2 {
        return Err(CliError::usage(format!(
            "{} has {} data rows; need at least 2 to split into train and test",
            path.display(),
            cells.len()
        )));
    }

    let labels = encode_labels(&cells, label_idx, label, regression)?;

    let mut columns = Vec::new();
    let mut feature_names = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if col == label_idx {
            continue;
        }
        let raw: Vec<&str> = cells.iter().map(|r| r[col].as_str()).collect();
        columns.push(detect_column(&raw));
        feature_names.push(name.clone());
    }
    if columns.is_empty() {
        return Err(CliError::usage(format!(
            "{} has no feature columns besides the label",
            path.display()
        )));
    }

    let table = Table::new(columns).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(Dataset {
        table,
        feature_names,
        labels,
    })
}

/// Numeric when every non-empty cell parses as f64; categorical otherwise.
fn detect_column(raw: &[&str]) -> Column {
    let numeric = raw.iter().all(|c| c.is_empty() || c.parse::<f64>().is_ok());
    if numeric {
        Column::Numeric(
            raw.iter()
                .map(|c| c.parse::<f64>().unwrap_or(f64::NAN))
                .collect(),
        )
    } else {
        Column::Categorical(raw.iter().map(|c| c.to_string()).collect())
    }
}

fn encode_labels(
    cells: &[Vec<String>],
    label_idx: usize,
    label: &str,
    regression: bool,
) -> CliResult<LabelColumn> {
    let raw: Vec<&str> = cells.iter().map(|r| r[label_idx].as_str()).collect();
    if regression {
        let mut targets = Vec::with_capacity(raw.len());
        for (row, cell) in raw.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| {
                CliError::usage(format!(
                    "label column {label:?} row {}: {cell:?} is not numeric; \
                     regression targets must parse as floats",
                    row + 2
                ))
            })?;
            targets.push(value);
        }
        return Ok(LabelColumn::Reals(targets));
    }

    let mut names: Vec<String> = raw.iter().map(|c| c.to_string()).collect();
    names.sort();
    names.dedup();
    // Sort class names numerically when they all parse, so "10" follows "9".
    if names.iter().all(|n| n.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| {
            let (a, b): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            a.total_cmp(&b)
        });
    }
    let ids = raw
        .iter()
        .map(|c| names.iter().position(|n| n == c).unwrap())
        .collect();
    Ok(LabelColumn::Classes { ids, names })
}
