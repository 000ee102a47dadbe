//! `lintab ablate`: controlled comparisons on synthetic tasks.
//!
//! Four modes:
//! - `causal`: ordered-context vs order-free training, accuracy as the
//!   labeled context grows (two checkpoints, one task set).
//! - `dims`: accuracy as features are reduced (PCA / SVD / random
//!   projection) to a fraction of their width.
//! - `sampling`: accuracy as the labeled context is subsampled
//!   (random / k-centers / k-medoids / uncertainty).
//! - `scaling`: forward wall time and counted memory traffic as the
//!   prompt grows at fixed width.

use std::path::PathBuf;

use clap::Args;
use lintab::model::checkpoint::Checkpoint;
use lintab::num::Matrix;
use lintab::pipeline::{classify_table, ClassifyOutcome, InferenceOptions, Table};
use lintab::prior::{sample_blobs, sample_task, PriorSpec, TabularTask};
use lintab::reduce::{
    apply_reducer, fit_reducer, select_rows, ReducerMethod, ReducerSpec, SamplerMethod,
    SamplerSpec,
};
use serde_json::{json, Value};

use crate::common::{environment, mean, median_of_three, PrecisionArg};
use crate::error::{CliError, CliResult};
use crate::record::{num, uint, ExperimentRecord, Row};

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    /// Ordered-context vs order-free models across context lengths
    Causal,
    /// Dimensionality reduction sweep
    Dims,
    /// Train-row subsampling sweep
    Sampling,
    /// Prompt-length scaling of wall time and memory traffic
    Scaling,
}

impl ModeArg {
    fn name(self) -> &'static str {
        match self {
            ModeArg::Causal => "causal",
            ModeArg::Dims => "dims",
            ModeArg::Sampling => "sampling",
            ModeArg::Scaling => "scaling",
        }
    }
}

#[derive(Args)]
pub struct AblateArgs {
    /// Which ablation to run
    #[arg(long, value_enum)]
    mode: ModeArg,

    /// Checkpoint for the dims, sampling, and scaling modes
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Order-free checkpoint for the causal mode
    #[arg(long)]
    noncausal: Option<PathBuf>,

    /// Ordered-context checkpoint for the causal mode
    #[arg(long)]
    causal: Option<PathBuf>,

    /// Tasks to average over (default: 20 for causal, 10 for dims and
    /// sampling, 1 for scaling)
    #[arg(long)]
    tasks: Option<usize>,

    /// Held-out rows per task (default: 1000 for causal, 500 for
    /// scaling; dims and sampling keep each task's own split)
    #[arg(long)]
    test_rows: Option<usize>,

    /// Context lengths for the causal mode
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
    contexts: Vec<usize>,

    /// Feature or train-row fractions for the dims and sampling modes
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
    fractions: Vec<f64>,

    /// Total prompt rows for the scaling mode
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1000,2000,3000,4000,5000,6000,7000,8000,9000,10000,11000,12000"
    )]
    sizes: Vec<usize>,

    /// Feature count for the scaling mode's blob tasks
    #[arg(long, default_value_t = 50)]
    width: usize,

    /// Cluster separation for the scaling mode's blob tasks
    #[arg(long, default_value_t = 4.0)]
    spread: f64,

    /// Storage precision of the preprocessed prompt
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    precision: PrecisionArg,

    /// Seed for the task stream
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Recorded in the output for provenance; scoring is single-threaded
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Record base path (default "ablate-<mode>"); writes .json and .csv
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: AblateArgs) -> CliResult<()> {
    let (config, rows) = match args.mode {
        ModeArg::Causal => run_causal(&args)?,
        ModeArg::Dims => run_dims(&args)?,
        ModeArg::Sampling => run_sampling(&args)?,
        ModeArg::Scaling => run_scaling(&args)?,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("ablate-{}", args.mode.name())));
    let record = ExperimentRecord {
        rows,
        ..ExperimentRecord::new(
            format!("ablate-{}", args.mode.name()),
            config,
            environment(args.threads, args.precision),
        )?
    };
    let (json_path, csv_path) = record.write(&out)?;
    println!(
        "{} rows; wrote {} and {}",
        record.rows.len(),
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}

fn need_checkpoint(path: &Option<PathBuf>, flag: &str, hint: &str) -> CliResult<Checkpoint> {
    let Some(path) = path else {
        return Err(CliError::usage(format!(
            "this mode needs {flag}; {hint}"
        )));
    };
    Checkpoint::load(path).map_err(|e| {
        CliError::runtime(format!(
            "cannot load {flag} {}: {e}; {hint}",
            path.display()
        ))
    })
}

fn classify_task_slice(
    ck: &Checkpoint,
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    n_train: usize,
    options: InferenceOptions,
) -> CliResult<(ClassifyOutcome, f64)> {
    let table = Table::from_matrix(x).map_err(|e| CliError::runtime(e.to_string()))?;
    median_of_three(|| {
        let o = classify_table(
            &ck.config,
            &ck.params,
            &table,
            labels,
            n_classes,
            n_train,
            options,
        )?;
        let s = o.seconds;
        Ok((o, s))
    })
}

/// Shared task pool for the sweep modes: desk-scale synthetic tasks with
/// labels pulled out as owned vectors.
fn sweep_tasks(args: &AblateArgs, count: usize) -> CliResult<Vec<(TabularTask, Vec<usize>, usize)>> {
    let spec = PriorSpec {
        seed: args.seed,
        ..PriorSpec::desk()
    };
    let mut tasks = Vec::with_capacity(count);
    for t in 0..count {
        let task = sample_task(&spec, t as u64)?;
        let (labels, n_classes) = task.class_labels()?;
        let labels = labels.to_vec();
        tasks.push((task, labels, n_classes));
    }
    Ok(tasks)
}

// ---------------------------------------------------------------------
// causal: ordered-context vs order-free across context lengths
// ---------------------------------------------------------------------

fn run_causal(args: &AblateArgs) -> CliResult<(Value, Vec<Row>)> {
    let hint = "train the pair first, e.g. `lintab train --preset toy-s` \
                and `lintab train --preset toy-s --causal-ablation`";
    let noncausal = need_checkpoint(&args.noncausal, "--noncausal", hint)?;
    let causal = need_checkpoint(&args.causal, "--causal", hint)?;
    if noncausal.config.causal_ablation {
        return Err(CliError::usage(
            "--noncausal points at an ordered-context checkpoint; swap the flags",
        ));
    }
    if !causal.config.causal_ablation {
        return Err(CliError::usage(
            "--causal points at an order-free checkpoint; swap the flags",
        ));
    }

    let mut contexts = args.contexts.clone();
    contexts.sort_unstable();
    contexts.dedup();
    if contexts.is_empty() || contexts[0] == 0 {
        return Err(CliError::usage("--contexts needs positive lengths"));
    }
    let max_ctx = *contexts.last().expect("non-empty");
    let test_rows = args.test_rows.unwrap_or(1000);
    if test_rows == 0 {
        return Err(CliError::usage("--test-rows must be positive"));
    }
    let n_tasks = args.tasks.unwrap_or(20).max(1);
    let prompt_cap = noncausal.config.max_prompt.min(causal.config.max_prompt);
    if max_ctx + test_rows > prompt_cap {
        return Err(CliError::usage(format!(
            "context {max_ctx} + {test_rows} test rows exceeds the {prompt_cap}-row prompt \
             these checkpoints accept"
        )));
    }

    let spec = PriorSpec {
        prompt_len: max_ctx + test_rows,
        seed: args.seed,
        ..PriorSpec::desk()
    };
    let options = InferenceOptions {
        precision: args.precision.to_lib(),
        ..InferenceOptions::default()
    };

    // accuracies[model][context] over tasks
    let models = [("non_causal", &noncausal), ("causal_ablation", &causal)];
    let mut acc = vec![vec![Vec::new(); contexts.len()]; models.len()];
    let mut secs = vec![vec![Vec::new(); contexts.len()]; models.len()];
    for t in 0..n_tasks {
        // Every context length reuses one task: the first `c` rows of a
        // shared train pool plus one shared test block.
        let task = sample_task(&spec, t as u64)?.with_split(max_ctx)?;
        let (labels, n_classes) = task.class_labels()?;
        let labels = labels.to_vec();
        let test_x = task
            .x
            .slice_rows(max_ctx, test_rows)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        for (ci, &c) in contexts.iter().enumerate() {
            let train_x = task
                .x
                .slice_rows(0, c)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let x = train_x
                .concat_rows(&test_x)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let mut sub_labels = labels[..c].to_vec();
            sub_labels.extend_from_slice(&labels[max_ctx..]);
            for (mi, (_, ck)) in models.iter().enumerate() {
                let (outcome, seconds) =
                    classify_task_slice(ck, &x, &sub_labels, n_classes, c, options)?;
                acc[mi][ci].push(outcome.accuracy);
                secs[mi][ci].push(seconds);
            }
        }
    }

    let mut rows = Vec::new();
    for (mi, (name, _)) in models.iter().enumerate() {
        for (ci, &c) in contexts.iter().enumerate() {
            let mut row = Row::new();
            row.insert("curve".into(), Value::String((*name).into()));
            row.insert("context".into(), uint(c as u64));
            row.insert(
                "mean_accuracy".into(),
                mean(acc[mi][ci].iter().copied()).map_or(Value::Null, num),
            );
            row.insert(
                "mean_seconds".into(),
                mean(secs[mi][ci].iter().copied()).map_or(Value::Null, num),
            );
            row.insert("tasks".into(), uint(n_tasks as u64));
            row.insert("test_rows".into(), uint(test_rows as u64));
            rows.push(row);
        }
    }
    let config = json!({
        "mode": "causal",
        "noncausal": args.noncausal.as_ref().map(|p| p.display().to_string()),
        "causal": args.causal.as_ref().map(|p| p.display().to_string()),
        "contexts": contexts,
        "tasks": n_tasks,
        "test_rows": test_rows,
        "seed": args.seed,
    });
    Ok((config, rows))
}

// ---------------------------------------------------------------------
// dims: reducer sweep
// ---------------------------------------------------------------------

fn run_dims(args: &AblateArgs) -> CliResult<(Value, Vec<Row>)> {
    let ck = need_checkpoint(
        &args.checkpoint,
        "--checkpoint",
        "train one first, e.g. `lintab train --preset toy-s`",
    )?;
    check_fractions(&args.fractions)?;
    let n_tasks = args.tasks.unwrap_or(10).max(1);
    let tasks = sweep_tasks(args, n_tasks)?;
    let options = InferenceOptions {
        precision: args.precision.to_lib(),
        ..InferenceOptions::default()
    };

    let baselines = run_baselines(&ck, &tasks, options)?;
    let mut rows = vec![baseline_row("reducer", &baselines, n_tasks)];

    let methods = [
        ReducerMethod::Pca,
        ReducerMethod::Svd,
        ReducerMethod::RandomProjection,
    ];
    for method in methods {
        for &frac in &args.fractions {
            let mut accs = Vec::new();
            let mut aucs = Vec::new();
            let mut deltas = Vec::new();
            let mut seconds = Vec::new();
            let mut dims = Vec::new();
            let mut identical = true;
            for ((task, labels, n_classes), base) in tasks.iter().zip(&baselines) {
                let d = task.x.cols();
                let k = ((frac * d as f64).round() as usize).clamp(1, d);
                dims.push(k as f64);
                let train_x = task
                    .x
                    .slice_rows(0, task.n_train)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let spec = ReducerSpec::new(method, k, args.seed);
                let state =
                    fit_reducer(&train_x, &spec).map_err(|e| CliError::runtime(e.to_string()))?;
                let x = apply_reducer(&state, &task.x)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let (outcome, secs) =
                    classify_task_slice(&ck, &x, labels, *n_classes, task.n_train, options)?;
                accs.push(outcome.accuracy);
                if let Some(a) = outcome.auc {
                    aucs.push(a);
                    if let Some(b) = base.auc {
                        deltas.push(a - b);
                    }
                }
                seconds.push(secs);
                identical &= outcome.predictions == base.predictions;
            }
            rows.push(sweep_row(
                "reducer",
                &method.to_string(),
                frac,
                &accs,
                &aucs,
                &deltas,
                &seconds,
                mean(dims.iter().copied()),
                identical,
            ));
        }
    }
    let config = json!({
        "mode": "dims",
        "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
        "fractions": args.fractions,
        "tasks": n_tasks,
        "seed": args.seed,
    });
    Ok((config, rows))
}

// ---------------------------------------------------------------------
// sampling: train-row subsampling sweep
// ---------------------------------------------------------------------

fn run_sampling(args: &AblateArgs) -> CliResult<(Value, Vec<Row>)> {
    let ck = need_checkpoint(
        &args.checkpoint,
        "--checkpoint",
        "train one first, e.g. `lintab train --preset toy-s`",
    )?;
    check_fractions(&args.fractions)?;
    let n_tasks = args.tasks.unwrap_or(10).max(1);
    let tasks = sweep_tasks(args, n_tasks)?;
    let options = InferenceOptions {
        precision: args.precision.to_lib(),
        ..InferenceOptions::default()
    };

    let baselines = run_baselines(&ck, &tasks, options)?;
    let mut rows = vec![baseline_row("sampler", &baselines, n_tasks)];

    let methods = [
        SamplerMethod::Random,
        SamplerMethod::KCenters,
        SamplerMethod::KMedoids,
        SamplerMethod::Uncertainty,
    ];
    for method in methods {
        for &frac in &args.fractions {
            let mut accs = Vec::new();
            let mut aucs = Vec::new();
            let mut deltas = Vec::new();
            let mut seconds = Vec::new();
            let mut kept = Vec::new();
            let mut identical = true;
            for ((task, labels, n_classes), base) in tasks.iter().zip(&baselines) {
                let n_train = task.n_train;
                let count = ((frac * n_train as f64).round() as usize).clamp(1, n_train);
                kept.push(count as f64);
                let train_x = task
                    .x
                    .slice_rows(0, n_train)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let spec = SamplerSpec::new(method, count, args.seed);
                let selected = select_rows(&train_x, &labels[..n_train], &spec)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let x_train = task
                    .x
                    .take_rows(&selected)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let x_test = task
                    .x
                    .slice_rows(n_train, task.x.rows() - n_train)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let x = x_train
                    .concat_rows(&x_test)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let mut sub_labels: Vec<usize> = selected.iter().map(|&i| labels[i]).collect();
                sub_labels.extend_from_slice(&labels[n_train..]);
                let (outcome, secs) =
                    classify_task_slice(&ck, &x, &sub_labels, *n_classes, count, options)?;
                accs.push(outcome.accuracy);
                if let Some(a) = outcome.auc {
                    aucs.push(a);
                    if let Some(b) = base.auc {
                        deltas.push(a - b);
                    }
                }
                seconds.push(secs);
                identical &= outcome.predictions == base.predictions;
            }
            rows.push(sweep_row(
                "sampler",
                &method.to_string(),
                frac,
                &accs,
                &aucs,
                &deltas,
                &seconds,
                mean(kept.iter().copied()),
                identical,
            ));
        }
    }
    let config = json!({
        "mode": "sampling",
        "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
        "fractions": args.fractions,
        "tasks": n_tasks,
        "seed": args.seed,
    });
    Ok((config, rows))
}

// ---------------------------------------------------------------------
// scaling: wall time and counted traffic vs prompt length
// ---------------------------------------------------------------------

fn run_scaling(args: &AblateArgs) -> CliResult<(Value, Vec<Row>)> {
    let ck = need_checkpoint(
        &args.checkpoint,
        "--checkpoint",
        "train one first, e.g. `lintab train --preset toy-s`",
    )?;
    let test_rows = args.test_rows.unwrap_or(500);
    if args.sizes.is_empty() {
        return Err(CliError::usage("--sizes needs at least one prompt length"));
    }
    if args.width == 0 {
        return Err(CliError::usage("--width must be positive"));
    }
    if let Some(&bad) = args.sizes.iter().find(|&&s| s <= test_rows) {
        return Err(CliError::usage(format!(
            "size {bad} leaves no train rows after {test_rows} test rows"
        )));
    }
    if let Some(&bad) = args.sizes.iter().find(|&&s| s > ck.config.max_prompt) {
        return Err(CliError::usage(format!(
            "size {bad} exceeds the {}-row prompt this checkpoint accepts",
            ck.config.max_prompt
        )));
    }
    let options = InferenceOptions {
        precision: args.precision.to_lib(),
        ..InferenceOptions::default()
    };

    let mut rows = Vec::new();
    for &size in &args.sizes {
        let task = sample_blobs(size, args.width, 2, args.spread, args.seed ^ size as u64)?
            .with_split(size - test_rows)?;
        let (labels, n_classes) = task.class_labels()?;
        let labels = labels.to_vec();
        let (outcome, seconds) =
            classify_task_slice(&ck, &task.x, &labels, n_classes, task.n_train, options)?;
        let mut row = Row::new();
        row.insert("n".into(), uint(size as u64));
        row.insert("n_train".into(), uint(task.n_train as u64));
        row.insert("d".into(), uint(args.width as u64));
        row.insert("seconds".into(), num(seconds));
        row.insert("accuracy".into(), num(outcome.accuracy));
        row.insert("accesses".into(), uint(outcome.attention_cost.accesses()));
        row.insert("flops".into(), uint(outcome.attention_cost.flops));
        rows.push(row);
    }
    let config = json!({
        "mode": "scaling",
        "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
        "sizes": args.sizes,
        "width": args.width,
        "spread": args.spread,
        "test_rows": test_rows,
        "seed": args.seed,
    });
    Ok((config, rows))
}

// ---------------------------------------------------------------------
// shared row builders
// ---------------------------------------------------------------------

fn check_fractions(fractions: &[f64]) -> CliResult<()> {
    if fractions.is_empty() {
        return Err(CliError::usage("--fractions needs at least one value"));
    }
    if let Some(&bad) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(CliError::usage(format!(
            "fraction {bad} outside (0, 1]"
        )));
    }
    Ok(())
}

fn run_baselines(
    ck: &Checkpoint,
    tasks: &[(TabularTask, Vec<usize>, usize)],
    options: InferenceOptions,
) -> CliResult<Vec<ClassifyOutcome>> {
    tasks
        .iter()
        .map(|(task, labels, n_classes)| {
            classify_task_slice(ck, &task.x, labels, *n_classes, task.n_train, options)
                .map(|(outcome, _)| outcome)
        })
        .collect()
}

fn baseline_row(kind: &str, baselines: &[ClassifyOutcome], n_tasks: usize) -> Row {
    let mut row = Row::new();
    row.insert(kind.into(), Value::String("none".into()));
    row.insert("fraction".into(), num(1.0));
    row.insert(
        "mean_accuracy".into(),
        mean(baselines.iter().map(|b| b.accuracy)).map_or(Value::Null, num),
    );
    row.insert(
        "mean_auc".into(),
        mean(baselines.iter().filter_map(|b| b.auc)).map_or(Value::Null, num),
    );
    row.insert(
        "mean_seconds".into(),
        mean(baselines.iter().map(|b| b.seconds)).map_or(Value::Null, num),
    );
    row.insert("identical_to_baseline".into(), Value::Bool(true));
    row.insert("tasks".into(), uint(n_tasks as u64));
    row
}

#[allow(clippy::too_many_arguments)]
fn sweep_row(
    kind: &str,
    method: &str,
    fraction: f64,
    accs: &[f64],
    aucs: &[f64],
    deltas: &[f64],
    seconds: &[f64],
    mean_budget: Option<f64>,
    identical: bool,
) -> Row {
    let mut row = Row::new();
    row.insert(kind.into(), Value::String(method.into()));
    row.insert("fraction".into(), num(fraction));
    row.insert(
        "mean_accuracy".into(),
        mean(accs.iter().copied()).map_or(Value::Null, num),
    );
    row.insert(
        "mean_auc".into(),
        mean(aucs.iter().copied()).map_or(Value::Null, num),
    );
    row.insert(
        "mean_auc_delta".into(),
        mean(deltas.iter().copied()).map_or(Value::Null, num),
    );
    row.insert(
        "mean_seconds".into(),
        mean(seconds.iter().copied()).map_or(Value::Null, num),
    );
    // "budget" is the mean kept count: features for reducers, train rows
    // for samplers.
    row.insert(
        "mean_budget".into(),
        mean_budget.map_or(Value::Null, num),
    );
    row.insert("identical_to_baseline".into(), Value::Bool(identical));
    row
}
