//! `lintab` — train, evaluate, and benchmark tabular in-context learners.
//!
//! Exit codes: 0 success, 2 usage errors (bad flags, malformed inputs),
//! 1 runtime failures (I/O, numerics).

mod ablate;
mod bench;
mod common;
mod data;
mod error;
mod eval;
mod gendata;
mod record;
mod train_cmd;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "lintab",
    version,
    about = "Tabular in-context learning with linear attention",
    long_about = "Tabular in-context learning with linear attention: pretrain \
                  transformers on synthetic priors, classify CSV datasets in a \
                  single forward pass, benchmark attention kernels against an \
                  exact cost model, and run data-efficiency ablations."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a model on a synthetic prior and save a checkpoint
    Train(train_cmd::TrainArgs),
    /// Classify or regress a CSV dataset with trained checkpoints
    Eval(eval::EvalArgs),
    /// Time attention kernels and cross-check their cost counters
    BenchAttention(bench::BenchArgs),
    /// Data-efficiency and architecture ablations
    Ablate(ablate::AblateArgs),
    /// Write synthetic tasks out as CSV
    GenData(gendata::GenDataArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train_cmd::run(args),
        Command::Eval(args) => eval::run(args),
        Command::BenchAttention(args) => bench::run(args),
        Command::Ablate(args) => ablate::run(args),
        Command::GenData(args) => gendata::run(args),
    };
    if let Err(err) = result {
        eprintln!("{err}");
        std::process::exit(err.exit_code());
    }
}
