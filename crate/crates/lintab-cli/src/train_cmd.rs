//! `lintab train`: pretrain on a synthetic prior, save a checkpoint and
//! its loss curve.

use std::path::PathBuf;

use clap::Args;
use lintab::model::checkpoint::Checkpoint;
use lintab::model::{ModelAttention, ModelConfig};
use lintab::prior::{PriorFamily, PriorSpec};
use lintab::train::{self, TrainConfig};

use crate::error::{CliError, CliResult};

const PRESETS: &[&str] = &["micro", "toy-s", "full-s100", "full-l100", "full-h1k"];

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PriorArg {
    /// Random-MLP tasks with quantile-discretized features
    Mlp,
    /// Gaussian blob clusters
    Blobs,
}

impl PriorArg {
    fn name(self) -> &'static str {
        match self {
            PriorArg::Mlp => "mlp",
            PriorArg::Blobs => "blobs",
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Scale preset: micro (seconds, for smoke tests), toy-s (minutes,
    /// the desk default), full-s100 / full-l100 / full-h1k (indicative
    /// production scales; multi-day runs)
    #[arg(long, default_value = "toy-s")]
    preset: String,

    /// Synthetic task family to pretrain on
    #[arg(long, value_enum, default_value_t = PriorArg::Mlp)]
    prior: PriorArg,

    /// Cluster separation for the blob prior
    #[arg(long, default_value_t = 6.0)]
    blob_spread: f64,

    /// Train the ordered-context variant (train rows attend only to
    /// earlier train rows) for the causal-masking ablation
    #[arg(long)]
    causal_ablation: bool,

    /// Override the preset's optimizer steps per epoch
    #[arg(long)]
    steps_per_epoch: Option<usize>,

    /// Override the preset's epoch count
    #[arg(long)]
    epochs: Option<usize>,

    /// Tasks per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,

    /// Peak learning rate (reached after warmup, then held)
    #[arg(long)]
    lr: Option<f64>,

    /// Fraction of total steps spent ramping the rate up linearly
    #[arg(long)]
    warmup_fraction: Option<f64>,

    /// Global gradient-norm ceiling
    #[arg(long)]
    grad_clip: Option<f64>,

    /// Continue a previous run from its checkpoint (same seed resumes
    /// bit-exactly)
    #[arg(long)]
    resume: Option<PathBuf>,

    /// Master seed; fixes the task stream and the initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Worker threads for the batch; any count gives identical results
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Checkpoint path (default "<preset>-<prior>[-causal].ckpt"); the
    /// loss curve lands next to it as *.loss.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A named training scale: architecture, prior shape, optimizer budget.
struct Preset {
    model: ModelConfig,
    prior: PriorSpec,
    batch_size: usize,
    steps_per_epoch: usize,
    epochs: usize,
    learning_rate: f64,
    warmup_fraction: f64,
    note: &'static str,
}

fn preset(name: &str) -> CliResult<Preset> {
    let toy = ModelConfig::toy_s();
    let desk_prior = PriorSpec::desk();
    match name {
        "micro" => Ok(Preset {
            model: ModelConfig {
                d_model: 16,
                n_layers: 1,
                n_heads: 2,
                hidden_mult: 2,
                feature_capacity: 10,
                class_capacity: 10,
                max_prompt: 1024,
                attention: ModelAttention::Linear,
                causal_ablation: false,
                ln_eps: 1e-5,
            },
            prior: PriorSpec {
                prompt_len: 64,
                ..desk_prior
            },
            batch_size: 2,
            steps_per_epoch: 10,
            epochs: 1,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            note: "smoke-test scale; finishes in seconds",
        }),
        "toy-s" => Ok(Preset {
            model: toy,
            prior: desk_prior,
            batch_size: 8,
            steps_per_epoch: 250,
            epochs: 4,
            learning_rate: 3e-5,
            warmup_fraction: 0.05,
            note: "desk scale; finishes in minutes",
        }),
        "full-s100" => Ok(Preset {
            model: ModelConfig {
                d_model: 512,
                n_layers: 12,
                n_heads: 8,
                ..toy
            },
            prior: PriorSpec {
                max_features: 100,
                prompt_len: 1152,
                ..desk_prior
            },
            batch_size: 8,
            steps_per_epoch: 8192,
            epochs: 8,
            learning_rate: 3e-5,
            warmup_fraction: 0.05,
            note: "indicative production scale (small model); multi-day run",
        }),
        "full-l100" => Ok(Preset {
            model: ModelConfig {
                d_model: 512,
                n_layers: 12,
                n_heads: 8,
                ..toy
            },
            prior: PriorSpec {
                max_features: 100,
                prompt_len: 4096,
                ..desk_prior
            },
            batch_size: 8,
            steps_per_epoch: 8192,
            epochs: 4,
            learning_rate: 3e-5,
            warmup_fraction: 0.05,
            note: "indicative production scale (long context); multi-day run",
        }),
        "full-h1k" => Ok(Preset {
            model: ModelConfig {
                d_model: 512,
                n_layers: 12,
                n_heads: 8,
                feature_capacity: 1000,
                ..toy
            },
            prior: PriorSpec {
                max_features: 1000,
                prompt_len: 2048,
                ..desk_prior
            },
            batch_size: 8,
            steps_per_epoch: 1024,
            epochs: 4,
            learning_rate: 3e-5,
            warmup_fraction: 0.05,
            note: "indicative production scale (high-dimensional); multi-week run",
        }),
        other => Err(CliError::usage(format!(
            "unknown preset {other:?}; choose one of {}",
            PRESETS.join(", ")
        ))),
    }
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let spec = preset(&args.preset)?;

    let mut prior = spec.prior;
    if args.prior == PriorArg::Blobs {
        if !(args.blob_spread.is_finite() && args.blob_spread >= 0.0) {
            return Err(CliError::usage(format!(
                "--blob-spread must be a non-negative number, got {}",
                args.blob_spread
            )));
        }
        prior.family = PriorFamily::Blobs {
            spread: args.blob_spread,
        };
    }
    prior.seed = args.seed;

    let mut model = spec.model;
    model.causal_ablation = args.causal_ablation;

    let config = TrainConfig {
        model,
        prior,
        batch_size: args.batch_size.unwrap_or(spec.batch_size),
        steps_per_epoch: args.steps_per_epoch.unwrap_or(spec.steps_per_epoch),
        epochs: args.epochs.unwrap_or(spec.epochs),
        learning_rate: args.lr.unwrap_or(spec.learning_rate),
        warmup_fraction: args.warmup_fraction.unwrap_or(spec.warmup_fraction),
        grad_clip_norm: args.grad_clip.unwrap_or(1.0),
        seed: args.seed,
        threads: args.threads,
    };
    config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;

    let out = args.out.unwrap_or_else(|| {
        let causal = if args.causal_ablation { "-causal" } else { "" };
        PathBuf::from(format!("{}-{}{causal}.ckpt", args.preset, args.prior.name()))
    });

    println!("preset {} ({})", args.preset, spec.note);
    println!(
        "{}",
        serde_json::to_string_pretty(&config)
            .map_err(|e| CliError::runtime(format!("cannot encode config: {e}")))?
    );

    let run = match &args.resume {
        Some(path) => {
            let checkpoint = Checkpoint::load(path).map_err(|e| {
                CliError::runtime(format!("cannot resume from {}: {e}", path.display()))
            })?;
            println!(
                "resuming from {} at step {}",
                path.display(),
                checkpoint.provenance.steps_completed
            );
            train::resume(checkpoint, &config)?
        }
        None => train::train(&config)?,
    };

    run.checkpoint
        .save(&out)
        .map_err(|e| CliError::runtime(format!("cannot save {}: {e}", out.display())))?;
    let loss_path = out.with_extension("loss.csv");
    train::write_loss_csv(&run.curve, &loss_path)
        .map_err(|e| CliError::runtime(format!("cannot save {}: {e}", loss_path.display())))?;

    report_curve(&run.curve);
    println!(
        "saved checkpoint to {} ({} steps) and loss curve to {}",
        out.display(),
        run.checkpoint.provenance.steps_completed,
        loss_path.display()
    );
    Ok(())
}

/// Print smoothed loss at the two ends of the curve so a glance shows
/// whether training moved.
fn report_curve(curve: &[lintab::model::checkpoint::LossPoint]) {
    if curve.is_empty() {
        return;
    }
    let window = curve.len().min(20);
    let head: f64 = curve[..window].iter().map(|p| p.loss).sum::<f64>() / window as f64;
    let tail: f64 =
        curve[curve.len() - window..].iter().map(|p| p.loss).sum::<f64>() / window as f64;
    println!(
        "loss (mean of first {window} steps) {head:.4} -> (mean of last {window} steps) {tail:.4}"
    );
}
