//! `lintab eval`: score a CSV dataset over shuffled train/test splits,
//! either with one explicit checkpoint or through the size-based router.

use std::path::PathBuf;

use clap::Args;
use lintab::model::checkpoint::Checkpoint;
use lintab::pipeline::{
    classify_table, regress_table_via_bins, select_model, InferenceOptions, ModelChoice, Router,
    RouterConfig,
};
use lintab::train::task_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::common::{environment, mean, median_of_three, PrecisionArg};
use crate::data::{load_dataset, Dataset, LabelColumn};
use crate::error::{CliError, CliResult};
use crate::record::{num, uint, ExperimentRecord, Row};

#[derive(Args)]
pub struct EvalArgs {
    /// CSV dataset to score
    #[arg(long)]
    data: PathBuf,

    /// Name of the label column
    #[arg(long)]
    label: String,

    /// Score with this single checkpoint (mutually exclusive with the
    /// router trio)
    #[arg(long, conflicts_with_all = ["s100", "l100", "h1k"])]
    checkpoint: Option<PathBuf>,

    /// Small-model checkpoint for the router
    #[arg(long, requires = "l100", requires = "h1k")]
    s100: Option<PathBuf>,

    /// Long-context checkpoint for the router
    #[arg(long, requires = "s100", requires = "h1k")]
    l100: Option<PathBuf>,

    /// High-dimensional checkpoint for the router
    #[arg(long, requires = "s100", requires = "l100")]
    h1k: Option<PathBuf>,

    /// Force one routed model (s100, l100, h1k, h1k+projection) instead
    /// of the shape-based choice; the routed choice is still recorded
    #[arg(long)]
    force_model: Option<String>,

    /// Row count at or above which the router picks the long-context model
    #[arg(long, default_value_t = RouterConfig::default().n_threshold)]
    n_threshold: usize,

    /// Feature count above which the router picks the high-dimensional model
    #[arg(long, default_value_t = RouterConfig::default().d_threshold)]
    d_threshold: usize,

    /// d/n ratio at or above which a large table still counts as wide
    #[arg(long, default_value_t = RouterConfig::default().ratio_threshold)]
    ratio_threshold: f64,

    /// Feature capacity of the high-dimensional model; wider tables get
    /// a random projection down to this many columns
    #[arg(long, default_value_t = RouterConfig::default().h1k_feature_cap)]
    h1k_cap: usize,

    /// Seed of that projection
    #[arg(long, default_value_t = RouterConfig::default().projection_seed)]
    projection_seed: u64,

    /// Number of shuffled train/test splits
    #[arg(long, default_value_t = 10)]
    splits: usize,

    /// Fraction of used rows held out as the test segment (0 < f < 1)
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,

    /// Treat the label column as a continuous target and regress via
    /// equal-width target bins
    #[arg(long)]
    regression: bool,

    /// Number of target bins for --regression
    #[arg(long, default_value_t = 10)]
    bins: usize,

    /// Storage precision of the preprocessed prompt
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    precision: PrecisionArg,

    /// Seed for the split shuffles
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Recorded in the output for provenance; scoring is single-threaded
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Record base path; writes <out>.json and <out>.csv
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

/// Where the weights come from: one explicit checkpoint, or the router.
enum Models {
    Explicit(Box<Checkpoint>),
    Routed(Box<Router>),
}

impl Models {
    /// Longest prompt any involved checkpoint accepts (the row cap).
    fn min_max_prompt(&self) -> usize {
        match self {
            Models::Explicit(ck) => ck.config.max_prompt,
            Models::Routed(router) => [ModelChoice::S100, ModelChoice::L100, ModelChoice::H1k]
                .into_iter()
                .map(|c| router.checkpoint_for(c).0.config.max_prompt)
                .min()
                .expect("router holds checkpoints"),
        }
    }
}

fn parse_force_model(raw: &str) -> CliResult<ModelChoice> {
    match raw {
        "s100" => Ok(ModelChoice::S100),
        "l100" => Ok(ModelChoice::L100),
        "h1k" => Ok(ModelChoice::H1k),
        "h1k+projection" => Ok(ModelChoice::H1kWithProjection),
        other => Err(CliError::usage(format!(
            "unknown model {other:?} for --force-model; choose one of s100, l100, h1k, h1k+projection"
        ))),
    }
}

fn load_checkpoint(path: &PathBuf, role: &str) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| {
        CliError::runtime(format!(
            "cannot load {role} checkpoint {}: {e}",
            path.display()
        ))
    })
}

fn load_models(args: &EvalArgs) -> CliResult<Models> {
    match (&args.checkpoint, &args.s100, &args.l100, &args.h1k) {
        (Some(path), None, None, None) => {
            Ok(Models::Explicit(Box::new(load_checkpoint(path, "the")?)))
        }
        (None, Some(s), Some(l), Some(h)) => {
            let config = RouterConfig {
                n_threshold: args.n_threshold,
                d_threshold: args.d_threshold,
                ratio_threshold: args.ratio_threshold,
                h1k_feature_cap: args.h1k_cap,
                projection_seed: args.projection_seed,
                s100_path: Some(s.clone()),
                l100_path: Some(l.clone()),
                h1k_path: Some(h.clone()),
            };
            let s100 = load_checkpoint(s, "s100")?;
            let l100 = load_checkpoint(l, "l100")?;
            let h1k = load_checkpoint(h, "h1k")?;
            let router = Router::from_checkpoints(config, s100, l100, h1k)
                .map_err(|e| CliError::usage(e.to_string()))?;
            Ok(Models::Routed(Box::new(router)))
        }
        (None, None, None, None) => Err(CliError::usage(
            "pass either --checkpoint or the router trio --s100 --l100 --h1k",
        )),
        _ => Err(CliError::usage(
            "the router needs all three of --s100, --l100, --h1k",
        )),
    }
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    if !(args.test_fraction > 0.0 && args.test_fraction < 1.0) {
        return Err(CliError::usage(format!(
            "--test-fraction {} would leave an empty train or test split; need 0 < f < 1",
            args.test_fraction
        )));
    }
    if args.splits == 0 {
        return Err(CliError::usage("--splits must be at least 1"));
    }
    let forced = args.force_model.as_deref().map(parse_force_model).transpose()?;
    if forced.is_some() && args.checkpoint.is_some() {
        return Err(CliError::usage(
            "--force-model selects among the router trio; it cannot apply to --checkpoint",
        ));
    }

    let dataset = load_dataset(&args.data, &args.label, args.regression)?;
    let models = load_models(&args)?;
    let n_total = dataset.n_rows();
    let d = dataset.table.n_cols();
    let cap = models.min_max_prompt();

    let mut rows: Vec<Row> = Vec::new();
    for split in 0..args.splits {
        rows.push(run_split(&args, &dataset, &models, forced, split, cap)?);
    }
    summarize(&rows, args.regression);

    let config = json!({
        "data": args.data.display().to_string(),
        "label": args.label,
        "n_rows": n_total,
        "n_features": d,
        "features": dataset.feature_names,
        "splits": args.splits,
        "test_fraction": args.test_fraction,
        "regression": args.regression,
        "bins": if args.regression { Value::from(args.bins) } else { Value::Null },
        "seed": args.seed,
        "mode": match &models {
            Models::Explicit(_) => "checkpoint",
            Models::Routed(_) => "router",
        },
        "force_model": forced.map(|c| c.to_string()),
        "row_cap": cap,
    });
    let record = ExperimentRecord {
        rows,
        ..ExperimentRecord::new("eval", config, environment(args.threads, args.precision))?
    };
    let (json_path, csv_path) = record.write(&args.out)?;
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn run_split(
    args: &EvalArgs,
    dataset: &Dataset,
    models: &Models,
    forced: Option<ModelChoice>,
    split: usize,
    cap: usize,
) -> CliResult<Row> {
    let n_total = dataset.n_rows();
    let rows_used = n_total.min(cap);
    let mut note = String::new();
    if rows_used < n_total {
        note = format!("capped {n_total} rows to the model's {cap}-row prompt");
    }

    let n_test = ((rows_used as f64 * args.test_fraction).round() as usize)
        .clamp(1, rows_used - 1);
    let n_train = rows_used - n_test;

    // Each split shuffles the rows with its own stream off the master
    // seed; the first `n_train` of the shuffle become the context.
    let mut indices: Vec<usize> = (0..n_total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(args.seed, split as u64, 0));
    indices.shuffle(&mut rng);
    indices.truncate(rows_used);
    let table = dataset
        .table
        .take_rows(&indices)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    // Route on the shape actually scored.
    let (ck, project_to, routed, chosen) = match models {
        Models::Explicit(ck) => (ck.as_ref(), None, None, None),
        Models::Routed(router) => {
            let routed = select_model(table.n_rows(), table.n_cols(), &router.config)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let effective = forced.unwrap_or(routed);
            let (ck, project) = router.checkpoint_for(effective);
            (ck, project, Some(routed), Some(effective))
        }
    };
    if let (Some(routed), Some(chosen)) = (routed, chosen) {
        if routed != chosen {
            if !note.is_empty() {
                note.push_str("; ");
            }
            note.push_str(&format!("forced override of routed choice {routed}"));
        }
    }
    let options = InferenceOptions {
        precision: args.precision.to_lib(),
        project_to,
    };

    let mut row = Row::new();
    row.insert("split".into(), uint(split as u64));
    row.insert("rows_used".into(), uint(rows_used as u64));
    row.insert("n_train".into(), uint(n_train as u64));
    row.insert("n_test".into(), uint(n_test as u64));
    match &dataset.labels {
        LabelColumn::Classes { ids, names } => {
            let labels: Vec<usize> = indices.iter().map(|&i| ids[i]).collect();
            let (outcome, seconds) = median_of_three(|| {
                let o = classify_table(
                    &ck.config,
                    &ck.params,
                    &table,
                    &labels,
                    names.len(),
                    n_train,
                    options,
                )?;
                let s = o.seconds;
                Ok((o, s))
            })?;
            row.insert("accuracy".into(), num(outcome.accuracy));
            row.insert("auc".into(), outcome.auc.map_or(Value::Null, num));
            row.insert("seconds".into(), num(seconds));
        }
        LabelColumn::Reals(targets) => {
            let targets: Vec<f64> = indices.iter().map(|&i| targets[i]).collect();
            let (outcome, seconds) = median_of_three(|| {
                let o = regress_table_via_bins(
                    &ck.config,
                    &ck.params,
                    &table,
                    &targets,
                    n_train,
                    args.bins,
                    options,
                )?;
                let s = o.seconds;
                Ok((o, s))
            })?;
            row.insert("r_squared".into(), num(outcome.r_squared));
            row.insert("bins".into(), uint(args.bins as u64));
            row.insert("seconds".into(), num(seconds));
        }
    }
    if let Some(chosen) = chosen {
        row.insert("model".into(), Value::String(chosen.to_string()));
    }
    if let Some(routed) = routed {
        row.insert("routed".into(), Value::String(routed.to_string()));
        row.insert("forced".into(), Value::Bool(forced.is_some()));
    }
    if !note.is_empty() {
        row.insert("note".into(), Value::String(note));
    }
    Ok(row)
}

fn summarize(rows: &[Row], regression: bool) {
    let metric = if regression { "r_squared" } else { "accuracy" };
    let values = rows
        .iter()
        .filter_map(|r| r.get(metric).and_then(Value::as_f64));
    let seconds = rows
        .iter()
        .filter_map(|r| r.get("seconds").and_then(Value::as_f64));
    if let (Some(m), Some(s)) = (mean(values), mean(seconds)) {
        println!(
            "{} splits: mean {metric} {m:.4}, mean forward seconds {s:.4}",
            rows.len()
        );
    }
}
