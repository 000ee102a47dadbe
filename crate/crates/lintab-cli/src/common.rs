//! Flag types and helpers shared by the verbs.

use crate::error::CliResult;
use crate::record::Environment;
use lintab::pipeline::Precision;

/// `--precision` flag. `f32` rounds checkpoint-visible inputs through
/// f32 storage before the (always f64) arithmetic.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum PrecisionArg {
    F32,
    #[default]
    F64,
}

impl PrecisionArg {
    pub fn to_lib(self) -> Precision {
        match self {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecisionArg::F32 => "f32",
            PrecisionArg::F64 => "f64",
        }
    }
}

/// The environment note every record carries.
pub fn environment(threads: usize, precision: PrecisionArg) -> Environment {
    Environment {
        threads,
        precision: precision.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Run a measurement three times and keep the first result with the
/// median of the three wall times (timing noise is one-sided, so the
/// median is the honest representative).
pub fn median_of_three<T>(mut run: impl FnMut() -> CliResult<(T, f64)>) -> CliResult<(T, f64)> {
    let (first, s1) = run()?;
    let (_, s2) = run()?;
    let (_, s3) = run()?;
    let mut times = [s1, s2, s3];
    times.sort_by(f64::total_cmp);
    Ok((first, times[1]))
}

/// Mean of an iterator of f64s; `None` when empty.
pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}
