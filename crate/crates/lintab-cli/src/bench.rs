//! `lintab bench-attention`: time the attention kernels over a grid of
//! prompt lengths and tile sizes, and cross-check the counters every
//! kernel reports against the closed-form cost model.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use lintab::attention::{attend, cost_model, AttentionRequest, AttentionVariant, DEFAULT_BLOCK};
use lintab::num::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::common::{environment, median_of_three, PrecisionArg};
use crate::error::{CliError, CliResult};
use crate::record::{num, uint, ExperimentRecord, Row};

const VARIANT_NAMES: &[(&str, AttentionVariant)] = &[
    ("softmax", AttentionVariant::Softmax),
    ("linear_naive", AttentionVariant::LinearNaive),
    ("linear_blocked", AttentionVariant::LinearBlocked),
    ("linear_causal_blocked", AttentionVariant::LinearCausalBlocked),
    ("pfn_linear", AttentionVariant::PfnLinear),
    ("pfn_softmax", AttentionVariant::PfnSoftmax),
];

fn variant_name(variant: AttentionVariant) -> &'static str {
    VARIANT_NAMES
        .iter()
        .find(|(_, v)| *v == variant)
        .map(|(name, _)| *name)
        .expect("every variant is named")
}

fn parse_variant(raw: &str) -> CliResult<AttentionVariant> {
    VARIANT_NAMES
        .iter()
        .find(|(name, _)| *name == raw)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = VARIANT_NAMES.iter().map(|(name, _)| *name).collect();
            CliError::usage(format!(
                "unknown kernel {raw:?}; choose from {}",
                names.join(", ")
            ))
        })
}

fn is_blocked(variant: AttentionVariant) -> bool {
    matches!(
        variant,
        AttentionVariant::LinearBlocked | AttentionVariant::LinearCausalBlocked
    )
}

#[derive(Args)]
pub struct BenchArgs {
    /// Prompt lengths to sweep
    #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096")]
    n: Vec<usize>,

    /// Head width
    #[arg(long, default_value_t = 64)]
    d: usize,

    /// Tile heights for the blocked kernels
    #[arg(long, value_delimiter = ',', default_value = "64")]
    block: Vec<usize>,

    /// Kernels to bench (comma-separated); all six by default
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,

    /// Storage precision of the q/k/v operands
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    precision: PrecisionArg,

    /// Seed for the gaussian operands
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Recorded in the output for provenance; kernels are single-threaded
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Record base path; writes <out>.json and <out>.csv
    #[arg(long, default_value = "bench-attention")]
    out: PathBuf,
}

pub fn run(args: BenchArgs) -> CliResult<()> {
    if args.n.is_empty() || args.n.contains(&0) {
        return Err(CliError::usage("--n needs at least one positive length"));
    }
    if args.d == 0 {
        return Err(CliError::usage("--d must be positive"));
    }
    if args.block.is_empty() || args.block.contains(&0) {
        return Err(CliError::usage("--block needs positive tile heights"));
    }
    let variants: Vec<AttentionVariant> = match &args.variants {
        Some(names) => names
            .iter()
            .map(|name| parse_variant(name))
            .collect::<CliResult<_>>()?,
        None => AttentionVariant::ALL.to_vec(),
    };

    let mut rows: Vec<Row> = Vec::new();
    let mut mismatches = 0usize;
    for &n in &args.n {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ n as u64);
        let mut q = Matrix::gaussian(n, args.d, 1.0, &mut rng);
        let mut k = Matrix::gaussian(n, args.d, 1.0, &mut rng);
        let mut v = Matrix::gaussian(n, args.d, 1.0, &mut rng);
        if args.precision == PrecisionArg::F32 {
            q.round_to_f32();
            k.round_to_f32();
            v.round_to_f32();
        }
        for &variant in &variants {
            let blocks: &[usize] = if is_blocked(variant) {
                &args.block
            } else {
                &[DEFAULT_BLOCK]
            };
            for &requested in blocks {
                let block = requested.min(n);
                if is_blocked(variant) && block < requested {
                    eprintln!(
                        "warning: block {requested} exceeds n={n}; clamped to {block} \
                         ({})",
                        variant_name(variant)
                    );
                    let mut warn = Row::new();
                    warn.insert("event".into(), Value::String("warning".into()));
                    warn.insert("variant".into(), Value::String(variant_name(variant).into()));
                    warn.insert("n".into(), uint(n as u64));
                    warn.insert("block_requested".into(), uint(requested as u64));
                    warn.insert("block".into(), uint(block as u64));
                    warn.insert(
                        "message".into(),
                        Value::String("tile height clamped to the prompt length".into()),
                    );
                    rows.push(warn);
                }
                let request = AttentionRequest {
                    variant,
                    block,
                    ..AttentionRequest::new(&q, &k, &v)
                };
                let (output, seconds) = median_of_three(|| {
                    let start = Instant::now();
                    let out = attend(&request)?;
                    Ok((out, start.elapsed().as_secs_f64()))
                })?;
                let analytic = cost_model(variant, n, args.d, block)?;
                let counters_match = analytic == output.cost;
                if !counters_match {
                    mismatches += 1;
                }

                let mut row = Row::new();
                row.insert("variant".into(), Value::String(variant_name(variant).into()));
                row.insert("n".into(), uint(n as u64));
                row.insert("d".into(), uint(args.d as u64));
                if is_blocked(variant) {
                    row.insert("block".into(), uint(block as u64));
                }
                row.insert("seconds".into(), num(seconds));
                row.insert("slow_loads".into(), uint(output.cost.slow_loads));
                row.insert("slow_stores".into(), uint(output.cost.slow_stores));
                row.insert("peak_slow_memory".into(), uint(output.cost.peak_slow_memory));
                row.insert("flops".into(), uint(output.cost.flops));
                row.insert("accesses".into(), uint(output.cost.accesses()));
                row.insert("analytic_accesses".into(), uint(analytic.accesses()));
                row.insert("analytic_flops".into(), uint(analytic.flops));
                row.insert("counters_match".into(), Value::Bool(counters_match));
                row.insert(
                    "gflops_per_second".into(),
                    num(output.cost.flops as f64 / seconds / 1e9),
                );
                rows.push(row);
            }
        }
    }

    let config = json!({
        "n": args.n,
        "d": args.d,
        "block": args.block,
        "variants": variants.iter().map(|&v| variant_name(v)).collect::<Vec<_>>(),
        "seed": args.seed,
    });
    let record = ExperimentRecord {
        rows,
        ..ExperimentRecord::new("bench-attention", config, environment(args.threads, args.precision))?
    };
    let (json_path, csv_path) = record.write(&args.out)?;
    if mismatches > 0 {
        eprintln!("warning: {mismatches} kernel(s) disagreed with the analytic cost model");
    }
    println!(
        "benched {} kernel configurations; wrote {} and {}",
        record.rows.iter().filter(|r| !r.contains_key("event")).count(),
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}
