//! Table-to-prompt preprocessing.
//!
//! Fitted on the train split only, then applied to the whole table:
//! categorical columns are ordinal-encoded by their train vocabulary
//! (unseen values map to -1), every column is z-scored by train
//! statistics (zero-variance columns collapse to 0), non-finite cells
//! become 0, an optional seeded Gaussian projection reduces very wide
//! tables, and finally features are zero-padded to the model's capacity
//! with every kept value scaled by `capacity / d`.

use crate::error::{Error, Result};
use crate::num::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One column of raw tabular data.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }
}

/// A raw table, column-major, all columns the same height.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<Column>,
    n_rows: usize,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Table> {
        let Some(first) = columns.first() else {
            return Err(Error::contract("table has zero columns"));
        };
        let n_rows = first.len();
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::contract("table columns differ in height"));
        }
        Ok(Table { columns, n_rows })
    }

    /// All-numeric view of a matrix.
    pub fn from_matrix(x: &Matrix) -> Result<Table> {
        let columns = (0..x.cols())
            .map(|c| Column::Numeric((0..x.rows()).map(|r| x.get(r, c)).collect()))
            .collect();
        Table::new(columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Gather rows by index (duplicates allowed), e.g. to shuffle a table
    /// into a seeded train/test split or keep a sampled subset.
    pub fn take_rows(&self, indices: &[usize]) -> Result<Table> {
        if indices.is_empty() {
            return Err(Error::contract("take_rows needs at least one row"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_rows) {
            return Err(Error::contract(format!(
                "row index {bad} out of range for {} rows",
                self.n_rows
            )));
        }
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                Column::Numeric(v) => {
                    Column::Numeric(indices.iter().map(|&i| v[i]).collect())
                }
                Column::Categorical(v) => {
                    Column::Categorical(indices.iter().map(|&i| v[i].clone()).collect())
                }
            })
            .collect();
        Table::new(columns)
    }
}

/// Everything learned from the train split.
#[derive(Debug, Clone)]
pub struct PreprocessState {
    /// Sorted train vocabulary per categorical column (`None` for numeric).
    vocabs: Vec<Option<Vec<String>>>,
    /// Train mean/std per column, post-encoding.
    means: Vec<f64>,
    stds: Vec<f64>,
    /// Seeded Gaussian projection applied after z-scoring, if any.
    projection: Option<Projection>,
    /// Width every output is padded to.
    capacity: usize,
    /// Multiplier on kept values: `capacity / d` where `d` is the width
    /// entering the padding step.
    pad_scale: f64,
}

#[derive(Debug, Clone)]
struct Projection {
    matrix: Matrix,
    seed: u64,
}

impl PreprocessState {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pad_scale(&self) -> f64 {
        self.pad_scale
    }

    pub fn projection_seed(&self) -> Option<u64> {
        self.projection.as_ref().map(|p| p.seed)
    }
}

fn encode_column(col: &Column, vocab: &Option<Vec<String>>) -> Result<Vec<f64>> {
    match (col, vocab) {
        (Column::Numeric(v), None) => Ok(v.clone()),
        (Column::Categorical(v), Some(vocab)) => Ok(v
            .iter()
            .map(|s| match vocab.binary_search(s) {
                Ok(i) => i as f64,
                Err(_) => -1.0,
            })
            .collect()),
        _ => Err(Error::contract(
            "column kind changed between fit and apply",
        )),
    }
}

/// Fit preprocessing on the first `n_train` rows of `table`. `capacity`
/// is the routed model's feature width; `project_to` requests a seeded
/// Gaussian projection down to that many features before padding.
pub fn fit_preprocess(
    table: &Table,
    n_train: usize,
    capacity: usize,
    project_to: Option<(usize, u64)>,
) -> Result<PreprocessState> {
    if n_train == 0 || n_train > table.n_rows() {
        return Err(Error::contract(format!(
            "preprocess needs 1..={} train rows, got {n_train}",
            table.n_rows()
        )));
    }
    if capacity == 0 {
        return Err(Error::contract("feature capacity must be positive"));
    }

    let mut vocabs = Vec::with_capacity(table.n_cols());
    let mut means = Vec::with_capacity(table.n_cols());
    let mut stds = Vec::with_capacity(table.n_cols());
    for col in table.columns() {
        let vocab = match col {
            Column::Numeric(_) => None,
            Column::Categorical(values) => {
                let mut v: Vec<String> = values[..n_train].to_vec();
                v.sort();
                v.dedup();
                Some(v)
            }
        };
        let encoded = encode_column(col, &vocab)?;
        let train: Vec<f64> = encoded[..n_train]
            .iter()
            .map(|&v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let mean = train.iter().sum::<f64>() / n_train as f64;
        let var = train.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_train as f64;
        means.push(mean);
        stds.push(var.sqrt());
        vocabs.push(vocab);
    }

    let d_in = table.n_cols();
    let projection = match project_to {
        Some((target, seed)) => {
            if target == 0 || target > d_in {
                return Err(Error::contract(format!(
                    "projection target {target} outside 1..={d_in}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Some(Projection {
                matrix: Matrix::gaussian(d_in, target, 1.0 / (target as f64).sqrt(), &mut rng),
                seed,
            })
        }
        None => None,
    };
    let d_out = projection.as_ref().map_or(d_in, |p| p.matrix.cols());
    if d_out > capacity {
        return Err(Error::Capacity {
            what: "feature columns",
            got: d_out,
            cap: capacity,
        });
    }

    Ok(PreprocessState {
        vocabs,
        means,
        stds,
        projection,
        capacity,
        pad_scale: capacity as f64 / d_out as f64,
    })
}

/// Apply a fitted state to any table with the same schema. Returns an
/// `n_rows x capacity` matrix.
pub fn apply_preprocess(state: &PreprocessState, table: &Table) -> Result<Matrix> {
    if table.n_cols() != state.vocabs.len() {
        return Err(Error::contract(format!(
            "table has {} columns, state was fitted on {}",
            table.n_cols(),
            state.vocabs.len()
        )));
    }
    let n = table.n_rows();
    let d = table.n_cols();
    let mut z = Matrix::zeros(n, d);
    for (c, (col, vocab)) in table.columns().iter().zip(state.vocabs.iter()).enumerate() {
        let encoded = encode_column(col, vocab)?;
        let (mean, std) = (state.means[c], state.stds[c]);
        for (r, &raw) in encoded.iter().enumerate() {
            let v = if raw.is_finite() { raw } else { 0.0 };
            let scored = if std > 0.0 { (v - mean) / std } else { 0.0 };
            z.set(r, c, if scored.is_finite() { scored } else { 0.0 });
        }
    }

    let projected = match &state.projection {
        Some(p) => z.matmul(&p.matrix)?,
        None => z,
    };

    let mut out = Matrix::zeros(n, state.capacity);
    for r in 0..n {
        for c in 0..projected.cols() {
            out.set(r, c, projected.get(r, c) * state.pad_scale);
        }
    }
    Ok(out)
}
