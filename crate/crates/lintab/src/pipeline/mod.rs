//! End-to-end inference: preprocess a table, pick a checkpoint by table
//! shape, classify every test row in one forward pass, and score the
//! result. Regression rides on the same path by discretizing targets
//! into uniform bins and decoding the predicted bin distribution back to
//! a number.

pub mod metrics;
mod preprocess;
mod router;

pub use preprocess::{apply_preprocess, fit_preprocess, Column, PreprocessState, Table};
pub use router::{select_model, ModelChoice, RouterConfig};

use crate::attention::AttentionCost;
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{forward_infer, ModelConfig, ModelInput, ModelParams};
use crate::num::{self, Matrix};
use crate::prior::{TabularTask, Targets};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

/// Storage precision for the preprocessed prompt. Arithmetic is always
/// f64; `F32` rounds the prompt through f32 before the forward pass,
/// matching what an engine with f32 tensors would actually see (trained
/// checkpoints already keep their weights f32-representable).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Knobs for the table-level inference entry points.
#[derive(Clone, Copy, Debug, Default)]
pub struct InferenceOptions {
    pub precision: Precision,
    /// Project features down to `(target_dim, seed)` before padding, as
    /// the high-dimensional route does for tables wider than its
    /// capacity.
    pub project_to: Option<(usize, u64)>,
}

/// Classification result for one task.
#[derive(Debug, Clone)]
pub struct ClassifyOutcome {
    /// `n_test x n_classes` class probabilities.
    pub probabilities: Matrix,
    /// Argmax class per test row.
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    /// Binary AUC for two classes, macro one-vs-rest for more; `None`
    /// when the test labels leave it undefined.
    pub auc: Option<f64>,
    /// Wall-clock seconds of the forward pass alone (monotonic clock).
    pub seconds: f64,
    pub attention_cost: AttentionCost,
    /// Which checkpoint handled the task, when a router was involved.
    pub model_choice: Option<ModelChoice>,
}

/// Regression result for one task.
#[derive(Debug, Clone)]
pub struct RegressOutcome {
    pub predictions: Vec<f64>,
    pub r_squared: f64,
    pub seconds: f64,
    pub bin_edges: Vec<f64>,
    pub model_choice: Option<ModelChoice>,
}

/// Preprocess a classification task into a model prompt. Returns the
/// fitted state alongside the ready input.
pub fn prompt_from_task(
    task: &TabularTask,
    config: &ModelConfig,
    project_to: Option<(usize, u64)>,
) -> Result<(ModelInput, PreprocessState)> {
    task.validate()?;
    let (labels, _) = task.class_labels()?;
    let table = Table::from_matrix(&task.x)?;
    prompt_from_table(&table, &labels[..task.n_train], config, project_to)
}

/// Preprocess an ingested table into a model prompt: the first
/// `train_labels.len()` rows are the training segment, the rest are
/// queries. String categoricals are encoded by train-split vocabulary,
/// numerics standardized by train-split statistics.
pub fn prompt_from_table(
    table: &Table,
    train_labels: &[usize],
    config: &ModelConfig,
    project_to: Option<(usize, u64)>,
) -> Result<(ModelInput, PreprocessState)> {
    let n_train = train_labels.len();
    if n_train == 0 || n_train >= table.n_rows() {
        return Err(Error::contract(format!(
            "prompt needs 1..n-1 train rows, got {n_train} of {}",
            table.n_rows()
        )));
    }
    let state = fit_preprocess(table, n_train, config.feature_capacity, project_to)?;
    let x = apply_preprocess(&state, table)?;
    Ok((
        ModelInput {
            x,
            train_labels: train_labels.to_vec(),
        },
        state,
    ))
}

/// Classify a task with an explicit model (no routing).
pub fn classify_with_model(
    config: &ModelConfig,
    params: &ModelParams,
    task: &TabularTask,
) -> Result<ClassifyOutcome> {
    classify_inner(config, params, task, None, None)
}

/// Classify an ingested table with an explicit model. Rows `0..n_train`
/// are the labeled context; the rest are scored against `labels[n_train..]`.
pub fn classify_table(
    config: &ModelConfig,
    params: &ModelParams,
    table: &Table,
    labels: &[usize],
    n_classes: usize,
    n_train: usize,
    options: InferenceOptions,
) -> Result<ClassifyOutcome> {
    classify_core(
        config,
        params,
        table,
        labels,
        n_classes,
        n_train,
        options.project_to,
        None,
        options.precision,
    )
}

fn classify_inner(
    config: &ModelConfig,
    params: &ModelParams,
    task: &TabularTask,
    project_to: Option<(usize, u64)>,
    model_choice: Option<ModelChoice>,
) -> Result<ClassifyOutcome> {
    task.validate()?;
    let (labels, n_classes) = task.class_labels()?;
    let table = Table::from_matrix(&task.x)?;
    classify_core(
        config,
        params,
        &table,
        labels,
        n_classes,
        task.n_train,
        project_to,
        model_choice,
        Precision::F64,
    )
}

#[allow(clippy::too_many_arguments)]
fn classify_core(
    config: &ModelConfig,
    params: &ModelParams,
    table: &Table,
    labels: &[usize],
    n_classes: usize,
    n_train: usize,
    project_to: Option<(usize, u64)>,
    model_choice: Option<ModelChoice>,
    precision: Precision,
) -> Result<ClassifyOutcome> {
    if labels.len() != table.n_rows() {
        return Err(Error::contract(format!(
            "{} labels for {} rows",
            labels.len(),
            table.n_rows()
        )));
    }
    if n_classes < 2 {
        return Err(Error::contract(
            "classification needs at least two classes",
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::contract(format!(
            "label {bad} outside the declared {n_classes} classes"
        )));
    }
    if n_classes > config.class_capacity {
        return Err(Error::Capacity {
            what: "classes",
            got: n_classes,
            cap: config.class_capacity,
        });
    }
    let (mut input, _state) = prompt_from_table(table, &labels[..n_train], config, project_to)?;
    if precision == Precision::F32 {
        input.x.round_to_f32();
    }

    let start = Instant::now();
    let out = forward_infer(config, params, &input)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut trimmed = Matrix::zeros(out.logits.rows(), n_classes);
    for r in 0..trimmed.rows() {
        trimmed
            .row_mut(r)
            .copy_from_slice(&out.logits.row(r)[..n_classes]);
    }
    let probabilities = num::softmax_rows(&trimmed);
    let predictions: Vec<usize> = (0..probabilities.rows())
        .map(|r| {
            let row = probabilities.row(r);
            (0..n_classes)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap()
        })
        .collect();

    let test_labels = &labels[n_train..];
    let accuracy = metrics::accuracy(&predictions, test_labels)?;
    let auc = if n_classes == 2 {
        let scores: Vec<f64> = (0..probabilities.rows())
            .map(|r| probabilities.get(r, 1))
            .collect();
        let pos: Vec<bool> = test_labels.iter().map(|&l| l == 1).collect();
        metrics::binary_auc(&scores, &pos)?
    } else {
        metrics::macro_ovr_auc(&probabilities, test_labels, n_classes)?
    };

    Ok(ClassifyOutcome {
        probabilities,
        predictions,
        accuracy,
        auc,
        seconds,
        attention_cost: out.attention_cost,
        model_choice,
    })
}

/// Uniform bin edges over `[lo, hi]`: `bins + 1` ascending values.
pub fn bin_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::contract("binning needs at least 2 bins"));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::contract(format!(
            "degenerate target range [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bins as f64;
    Ok((0..=bins).map(|i| lo + width * i as f64).collect())
}

/// Which bin a value falls in; out-of-range values clamp to the edge
/// bins.
pub fn bin_index(value: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let lo = edges[0];
    let width = (edges[bins] - lo) / bins as f64;
    if !value.is_finite() || value <= lo {
        return 0;
    }
    (((value - lo) / width) as usize).min(bins - 1)
}

/// Decode bin probabilities to numbers: the probability-weighted bin
/// midpoint per row.
pub fn decode_bin_probs(probs: &Matrix, edges: &[f64]) -> Result<Vec<f64>> {
    let bins = edges.len() - 1;
    if probs.cols() != bins {
        return Err(Error::contract(format!(
            "{} probability columns for {bins} bins",
            probs.cols()
        )));
    }
    let midpoints: Vec<f64> = (0..bins).map(|i| (edges[i] + edges[i + 1]) / 2.0).collect();
    Ok((0..probs.rows())
        .map(|r| {
            probs
                .row(r)
                .iter()
                .zip(midpoints.iter())
                .map(|(p, m)| p * m)
                .sum()
        })
        .collect())
}

/// Regression through the classifier: discretize train targets into
/// `bins` uniform bins over the train range, predict bin probabilities,
/// decode to weighted midpoints, and score R² against the test targets
/// (clamped to the train range, since the decoder cannot leave it).
pub fn regress_via_bins_with_model(
    config: &ModelConfig,
    params: &ModelParams,
    task: &TabularTask,
    bins: usize,
) -> Result<RegressOutcome> {
    regress_inner(config, params, task, bins, None, None)
}

/// Regression over an ingested table via target binning, with an
/// explicit model. Rows `0..n_train` supply the labeled context and the
/// bin range; the rest are scored against `targets[n_train..]`.
pub fn regress_table_via_bins(
    config: &ModelConfig,
    params: &ModelParams,
    table: &Table,
    targets: &[f64],
    n_train: usize,
    bins: usize,
    options: InferenceOptions,
) -> Result<RegressOutcome> {
    regress_core(
        config,
        params,
        table,
        targets,
        n_train,
        bins,
        options.project_to,
        None,
        options.precision,
    )
}

fn regress_inner(
    config: &ModelConfig,
    params: &ModelParams,
    task: &TabularTask,
    bins: usize,
    project_to: Option<(usize, u64)>,
    model_choice: Option<ModelChoice>,
) -> Result<RegressOutcome> {
    task.validate()?;
    let targets = match &task.targets {
        Targets::Reals(t) => t,
        Targets::Classes { .. } => {
            return Err(Error::contract(
                "regression needs real targets, task holds classes",
            ))
        }
    };
    let table = Table::from_matrix(&task.x)?;
    regress_core(
        config,
        params,
        &table,
        targets,
        task.n_train,
        bins,
        project_to,
        model_choice,
        Precision::F64,
    )
}

#[allow(clippy::too_many_arguments)]
fn regress_core(
    config: &ModelConfig,
    params: &ModelParams,
    table: &Table,
    targets: &[f64],
    n_train: usize,
    bins: usize,
    project_to: Option<(usize, u64)>,
    model_choice: Option<ModelChoice>,
    precision: Precision,
) -> Result<RegressOutcome> {
    if targets.len() != table.n_rows() {
        return Err(Error::contract(format!(
            "{} targets for {} rows",
            targets.len(),
            table.n_rows()
        )));
    }
    if n_train == 0 || n_train >= table.n_rows() {
        return Err(Error::contract(format!(
            "regression needs 1..n-1 train rows, got {n_train} of {}",
            table.n_rows()
        )));
    }
    if bins > config.class_capacity {
        return Err(Error::Capacity {
            what: "bins",
            got: bins,
            cap: config.class_capacity,
        });
    }
    let train = &targets[..n_train];
    if train.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            what: "train targets".to_string(),
        });
    }
    let lo = train.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = train.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let edges = bin_edges(lo, hi, bins)?;

    let labels: Vec<usize> = targets.iter().map(|&t| bin_index(t, &edges)).collect();
    let outcome = classify_core(
        config,
        params,
        table,
        &labels,
        bins,
        n_train,
        project_to,
        model_choice,
        precision,
    )?;
    let predictions = decode_bin_probs(&outcome.probabilities, &edges)?;

    let clamped: Vec<f64> = targets[n_train..]
        .iter()
        .map(|&t| t.clamp(lo, hi))
        .collect();
    let r_squared = metrics::r_squared(&predictions, &clamped)?;

    Ok(RegressOutcome {
        predictions,
        r_squared,
        seconds: outcome.seconds,
        bin_edges: edges,
        model_choice,
    })
}

/// The three loaded checkpoints plus the selection thresholds.
pub struct Router {
    pub config: RouterConfig,
    s100: Checkpoint,
    l100: Checkpoint,
    h1k: Checkpoint,
}

impl Router {
    /// Load all three checkpoints from the paths in `config`.
    pub fn load(config: RouterConfig) -> Result<Router> {
        config.validate()?;
        let load = |path: &Option<std::path::PathBuf>, which: &str| -> Result<Checkpoint> {
            let Some(path) = path else {
                return Err(Error::contract(format!(
                    "router config is missing the {which} checkpoint path"
                )));
            };
            Checkpoint::load(path)
        };
        let s100 = load(&config.s100_path, "s100")?;
        let l100 = load(&config.l100_path, "l100")?;
        let h1k = load(&config.h1k_path, "h1k")?;
        Router::from_checkpoints(config, s100, l100, h1k)
    }

    /// Assemble a router from already-loaded checkpoints.
    pub fn from_checkpoints(
        config: RouterConfig,
        s100: Checkpoint,
        l100: Checkpoint,
        h1k: Checkpoint,
    ) -> Result<Router> {
        config.validate()?;
        if h1k.config.feature_capacity < config.h1k_feature_cap {
            return Err(Error::contract(format!(
                "high-dimensional checkpoint holds {} features, router expects {}",
                h1k.config.feature_capacity, config.h1k_feature_cap
            )));
        }
        Ok(Router {
            config,
            s100,
            l100,
            h1k,
        })
    }

    /// The checkpoint a table of this shape would use.
    pub fn choose(&self, n: usize, d: usize) -> Result<(ModelChoice, &Checkpoint)> {
        let choice = select_model(n, d, &self.config)?;
        let ck = match choice {
            ModelChoice::S100 => &self.s100,
            ModelChoice::L100 => &self.l100,
            ModelChoice::H1k | ModelChoice::H1kWithProjection => &self.h1k,
        };
        Ok((choice, ck))
    }

    fn projection_for(&self, choice: ModelChoice) -> Option<(usize, u64)> {
        match choice {
            ModelChoice::H1kWithProjection => {
                Some((self.config.h1k_feature_cap, self.config.projection_seed))
            }
            _ => None,
        }
    }

    /// The checkpoint and projection setting a given (possibly forced,
    /// non-routed) choice uses. Pair with [`classify_table`] to override
    /// the routing rule while keeping everything else identical.
    pub fn checkpoint_for(&self, choice: ModelChoice) -> (&Checkpoint, Option<(usize, u64)>) {
        let ck = match choice {
            ModelChoice::S100 => &self.s100,
            ModelChoice::L100 => &self.l100,
            ModelChoice::H1k | ModelChoice::H1kWithProjection => &self.h1k,
        };
        (ck, self.projection_for(choice))
    }

    /// Route and classify.
    pub fn classify(&self, task: &TabularTask) -> Result<ClassifyOutcome> {
        let (choice, ck) = self.choose(task.n_rows(), task.n_features())?;
        classify_inner(
            &ck.config,
            &ck.params,
            task,
            self.projection_for(choice),
            Some(choice),
        )
    }

    /// Route and regress via target binning.
    pub fn regress_via_bins(&self, task: &TabularTask, bins: usize) -> Result<RegressOutcome> {
        let (choice, ck) = self.choose(task.n_rows(), task.n_features())?;
        regress_inner(
            &ck.config,
            &ck.params,
            task,
            bins,
            self.projection_for(choice),
            Some(choice),
        )
    }

    /// Route and classify an ingested table (rows `0..n_train` labeled).
    pub fn classify_table(
        &self,
        table: &Table,
        labels: &[usize],
        n_classes: usize,
        n_train: usize,
        precision: Precision,
    ) -> Result<ClassifyOutcome> {
        let (choice, ck) = self.choose(table.n_rows(), table.n_cols())?;
        classify_core(
            &ck.config,
            &ck.params,
            table,
            labels,
            n_classes,
            n_train,
            self.projection_for(choice),
            Some(choice),
            precision,
        )
    }

    /// Route and regress an ingested table via target binning.
    pub fn regress_table_via_bins(
        &self,
        table: &Table,
        targets: &[f64],
        n_train: usize,
        bins: usize,
        precision: Precision,
    ) -> Result<RegressOutcome> {
        let (choice, ck) = self.choose(table.n_rows(), table.n_cols())?;
        regress_core(
            &ck.config,
            &ck.params,
            table,
            targets,
            n_train,
            bins,
            self.projection_for(choice),
            Some(choice),
            precision,
        )
    }
}
