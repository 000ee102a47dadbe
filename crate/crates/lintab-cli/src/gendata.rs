//! `lintab gen-data`: write one synthetic task out as a CSV so the eval
//! and training paths can be exercised end to end without external data.

use std::path::PathBuf;

use clap::Args;
use lintab::prior::{sample_blobs, sample_task, PriorSpec, Targets};

use crate::error::{CliError, CliResult};

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyArg {
    /// Gaussian blob clusters with exactly the requested shape
    Blobs,
    /// One random-MLP prior task; --features and --classes are upper
    /// bounds the prior draws under
    Mlp,
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Task family to sample
    #[arg(long, value_enum, default_value_t = FamilyArg::Blobs)]
    family: FamilyArg,

    /// Rows to generate
    #[arg(long, default_value_t = 512)]
    rows: usize,

    /// Feature count (exact for blobs, an upper bound for mlp)
    #[arg(long, default_value_t = 8)]
    features: usize,

    /// Class count (exact for blobs, an upper bound for mlp)
    #[arg(long, default_value_t = 3)]
    classes: usize,

    /// Cluster separation for blobs
    #[arg(long, default_value_t = 6.0)]
    spread: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path
    #[arg(long, default_value = "tasks.csv")]
    out: PathBuf,
}

pub fn run(args: GenDataArgs) -> CliResult<()> {
    if args.rows < 2 {
        return Err(CliError::usage("--rows must be at least 2"));
    }
    if args.features == 0 {
        return Err(CliError::usage("--features must be positive"));
    }
    if args.classes < 2 {
        return Err(CliError::usage("--classes must be at least 2"));
    }

    let task = match args.family {
        FamilyArg::Blobs => {
            sample_blobs(args.rows, args.features, args.classes, args.spread, args.seed)?
        }
        FamilyArg::Mlp => {
            let spec = PriorSpec {
                max_features: args.features,
                max_classes: args.classes,
                prompt_len: args.rows,
                seed: args.seed,
                ..PriorSpec::desk()
            };
            spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
            sample_task(&spec, 0)?
        }
    };

    let Targets::Classes { labels, n_classes } = &task.targets else {
        return Err(CliError::runtime("prior produced non-class targets"));
    };
    let d = task.x.cols();
    if args.family == FamilyArg::Mlp && (d < args.features || *n_classes < args.classes) {
        println!(
            "prior drew {d} features and {n_classes} classes under the bounds \
             --features {} --classes {}",
            args.features, args.classes
        );
    }

    let mut writer = csv::Writer::from_path(&args.out)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", args.out.display())))?;
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    writer
        .write_record(&header)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for (i, label) in labels.iter().enumerate() {
        let mut record: Vec<String> = (0..d).map(|j| task.x.get(i, j).to_string()).collect();
        record.push(label.to_string());
        writer
            .write_record(&record)
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::runtime(e.to_string()))?;

    println!(
        "wrote {} rows x {d} features, {n_classes} classes to {}",
        task.x.rows(),
        args.out.display()
    );
    Ok(())
}
