//! Synthetic task generators.
//!
//! Pretraining never sees real data: every task is a fresh table drawn
//! from a structural prior. [`sample_task`] draws a random MLP, pushes
//! Gaussian inputs through it, and discretizes the scalar output into
//! classes by empirical quantiles — a desk-scale stand-in for the heavier
//! structural-causal priors used at full scale. [`sample_blobs`] makes
//! well-separated Gaussian clusters for controlled evaluations where the
//! Bayes-optimal answer is known.
//!
//! Generation is pure and seed-driven: identical `(spec, seed)` always
//! yields a byte-identical task, and distinct seeds are independent
//! streams, so task generation parallelizes trivially.

use crate::error::{Error, Result};
use crate::num::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hidden-layer activation of the generating MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Which structural family the prior draws tasks from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    /// Random-MLP scores discretized by quantiles (the default).
    Mlp,
    /// Well-separated Gaussian clusters, one per class, centers at
    /// pairwise distance at least `spread`.
    Blobs { spread: f64 },
}

/// How the scalar MLP output is cut into classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassBalance {
    /// Cuts at the balanced empirical quantiles — classes as even as
    /// integer division allows.
    Quantile,
    /// Cuts at uniformly drawn quantile positions — uneven classes;
    /// redrawn (up to 10 times) if the train split misses a class, then
    /// balanced quantiles as the fallback.
    RandomThreshold,
}

/// Parameters of the task-generating prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Task family.
    pub family: PriorFamily,
    /// Features per task are drawn uniformly from `1..=max_features`.
    pub max_features: usize,
    /// Classes per task are drawn uniformly from `2..=max_classes`.
    pub max_classes: usize,
    /// Total rows per task (train + test).
    pub prompt_len: usize,
    /// Hidden layers of the generating MLP, drawn uniformly from this
    /// inclusive range; depth 0 is a linear map.
    pub depth_range: (usize, usize),
    /// Hidden width, drawn uniformly per layer from this inclusive range.
    pub width_range: (usize, usize),
    /// Activations the prior may pick from (one per task).
    pub activations: Vec<Activation>,
    /// Gaussian noise added to the features after targets are computed.
    pub feature_noise_std: f64,
    pub class_balance: ClassBalance,
    /// Base seed; the per-task seed selects an independent stream.
    pub seed: u64,
}

impl PriorSpec {
    /// Desk-scale defaults: up to 10 features and 10 classes, 256-row
    /// prompts, MLPs up to 2 hidden layers of width 4–16.
    pub fn desk() -> Self {
        PriorSpec {
            family: PriorFamily::Mlp,
            max_features: 10,
            max_classes: 10,
            prompt_len: 256,
            depth_range: (0, 2),
            width_range: (4, 16),
            activations: vec![Activation::Tanh, Activation::Relu],
            feature_noise_std: 0.1,
            class_balance: ClassBalance::Quantile,
            seed: 0,
        }
    }

    /// Desk-scale blob prior: separated clusters instead of MLP scores.
    pub fn desk_blobs(spread: f64) -> Self {
        PriorSpec {
            family: PriorFamily::Blobs { spread },
            ..PriorSpec::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PriorFamily::Blobs { spread } = self.family {
            if !(spread.is_finite() && spread >= 0.0) {
                return Err(Error::contract("blob spread must be non-negative"));
            }
        }
        if self.prompt_len < 4 {
            return Err(Error::contract("prompt_len must be at least 4"));
        }
        if self.max_classes < 2 {
            return Err(Error::contract("max_classes must be at least 2"));
        }
        if self.max_features == 0 {
            return Err(Error::contract("max_features must be positive"));
        }
        if self.depth_range.0 > self.depth_range.1 {
            return Err(Error::contract("depth_range is empty"));
        }
        if self.width_range.0 > self.width_range.1 || self.width_range.0 == 0 {
            return Err(Error::contract("width_range is empty or zero"));
        }
        if self.activations.is_empty() {
            return Err(Error::contract("activation set is empty"));
        }
        if !(self.feature_noise_std.is_finite() && self.feature_noise_std >= 0.0) {
            return Err(Error::contract("feature_noise_std must be non-negative"));
        }
        if self.max_classes > self.prompt_len / 2 {
            return Err(Error::contract(
                "max_classes must fit in half the prompt so every split can see every class",
            ));
        }
        Ok(())
    }
}

/// What a column holds. Prior-generated tasks are all numeric; tables
/// loaded from files may carry categorical columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical { cardinality: usize },
}

/// Per-row targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, n_classes: usize },
    Reals(Vec<f64>),
}

/// One tabular problem: a feature matrix whose first `n_train` rows are
/// the labeled context and whose remaining rows are queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularTask {
    pub x: Matrix,
    pub targets: Targets,
    pub n_train: usize,
    pub columns: Vec<ColumnKind>,
}

impl TabularTask {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_test(&self) -> usize {
        self.x.rows() - self.n_train
    }

    /// Classification labels, if this is a classification task.
    pub fn class_labels(&self) -> Result<(&[usize], usize)> {
        match &self.targets {
            Targets::Classes { labels, n_classes } => Ok((labels, *n_classes)),
            Targets::Reals(_) => Err(Error::contract("task holds real targets, not classes")),
        }
    }

    /// Move the train/test boundary.
    pub fn with_split(mut self, n_train: usize) -> Result<Self> {
        if n_train == 0 || n_train >= self.x.rows() {
            return Err(Error::contract(format!(
                "split {n_train} must leave at least one train and one test row of {}",
                self.x.rows()
            )));
        }
        self.n_train = n_train;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_train >= self.x.rows() {
            return Err(Error::contract("split must leave train and test rows"));
        }
        if self.columns.len() != self.x.cols() {
            return Err(Error::contract("column kinds must cover every column"));
        }
        match &self.targets {
            Targets::Classes { labels, n_classes } => {
                if labels.len() != self.x.rows() {
                    return Err(Error::contract("one label per row required"));
                }
                if labels.iter().any(|&l| l >= *n_classes) {
                    return Err(Error::contract("label outside declared class count"));
                }
            }
            Targets::Reals(t) => {
                if t.len() != self.x.rows() {
                    return Err(Error::contract("one target per row required"));
                }
            }
        }
        Ok(())
    }
}

/// The per-task random stream: `spec.seed` picks the family, `seed` the
/// member.
fn task_rng(base: u64, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(seed);
    rng
}

/// Draw one classification task from the prior.
///
/// Deterministic in `(spec, seed)`. The task's feature count, class
/// count, and split position are drawn first (features uniform in
/// `1..=max_features`, classes uniform in `2..=max_classes`, split
/// uniform over the middle half of the prompt), then the family fills in
/// rows and labels:
///
/// - MLP family: inputs are standard Gaussian; a random MLP (depth,
///   widths, and activation drawn from the spec) maps each row to a
///   scalar; rows are ranked by that scalar and cut into classes at
///   empirical quantiles (balanced or randomly placed per
///   `class_balance`); feature noise is added after the targets are
///   fixed.
/// - Blob family: one unit-variance Gaussian cluster per class, centers
///   at pairwise distance at least `spread`.
pub fn sample_task(spec: &PriorSpec, seed: u64) -> Result<TabularTask> {
    spec.validate()?;
    let mut rng = task_rng(spec.seed, seed);

    let d = rng.gen_range(1..=spec.max_features);
    let n_classes = rng.gen_range(2..=spec.max_classes);
    let n = spec.prompt_len;
    let n_train = rng.gen_range(n / 4..=(3 * n) / 4).max(1);

    if let PriorFamily::Blobs { spread } = spec.family {
        let mut task = blobs_with_rng(n, d, n_classes, spread, &mut rng)?;
        task.n_train = n_train;
        task.validate()?;
        return Ok(task);
    }

    let x = Matrix::gaussian(n, d, 1.0, &mut rng);
    let scores = random_mlp_scores(spec, &x, &mut rng);

    // Rank rows by score (ties broken by row index) and cut the ranking
    // into classes. Ranks make the construction immune to tied or even
    // constant scores — classes stay non-empty over the prompt.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (r, &row) in order.iter().enumerate() {
        rank[row] = r;
    }

    let balanced_cuts: Vec<usize> = (1..n_classes).map(|k| k * n / n_classes).collect();
    let labels = match spec.class_balance {
        ClassBalance::Quantile => label_by_cuts(&rank, &balanced_cuts),
        ClassBalance::RandomThreshold => {
            let mut chosen = None;
            for _ in 0..10 {
                let mut cuts: Vec<usize> = (0..n_classes - 1)
                    .map(|_| (rng.gen_range(0.0..1.0) * n as f64) as usize)
                    .collect();
                cuts.sort_unstable();
                cuts.dedup();
                if cuts.len() != n_classes - 1 || cuts[0] == 0 {
                    continue;
                }
                let candidate = label_by_cuts(&rank, &cuts);
                if covers_all(&candidate[..n_train], n_classes) {
                    chosen = Some(candidate);
                    break;
                }
            }
            chosen.unwrap_or_else(|| label_by_cuts(&rank, &balanced_cuts))
        }
    };

    let mut x = x;
    if spec.feature_noise_std > 0.0 {
        let noise = Matrix::gaussian(n, d, spec.feature_noise_std, &mut rng);
        x.add_assign(&noise)?;
    }

    let task = TabularTask {
        x,
        targets: Targets::Classes { labels, n_classes },
        n_train,
        columns: vec![ColumnKind::Numeric; d],
    };
    task.validate()?;
    Ok(task)
}

/// Push every row of `x` through a freshly drawn MLP; returns the scalar
/// output per row.
fn random_mlp_scores(spec: &PriorSpec, x: &Matrix, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let depth = rng.gen_range(spec.depth_range.0..=spec.depth_range.1);
    let activation = *spec
        .activations
        .as_slice()
        .choose(rng)
        .expect("validated non-empty");
    let mut layers: Vec<(Matrix, Matrix)> = Vec::new();
    let mut fan_in = x.cols();
    for _ in 0..depth {
        let width = rng.gen_range(spec.width_range.0..=spec.width_range.1);
        let w = Matrix::gaussian(fan_in, width, 1.0 / (fan_in as f64).sqrt(), rng);
        let b = Matrix::gaussian(1, width, 0.1, rng);
        layers.push((w, b));
        fan_in = width;
    }
    let w_out = Matrix::gaussian(fan_in, 1, 1.0 / (fan_in as f64).sqrt(), rng);
    let b_out = Matrix::gaussian(1, 1, 0.1, rng);

    let mut h = x.clone();
    for (w, b) in &layers {
        h = h
            .matmul(w)
            .and_then(|m| m.add_row_vec(b))
            .expect("shapes are consistent by construction")
            .map(|v| activation.apply(v));
    }
    let out = h
        .matmul(&w_out)
        .and_then(|m| m.add_row_vec(&b_out))
        .expect("shapes are consistent by construction");
    (0..out.rows()).map(|r| out.get(r, 0)).collect()
}

/// `cuts` are rank positions; a row's class is the number of cuts at or
/// below its rank.
fn label_by_cuts(rank: &[usize], cuts: &[usize]) -> Vec<usize> {
    rank.iter()
        .map(|&r| cuts.iter().filter(|&&c| c <= r).count())
        .collect()
}

fn covers_all(labels: &[usize], n_classes: usize) -> bool {
    let mut seen = vec![false; n_classes];
    for &l in labels {
        seen[l] = true;
    }
    seen.into_iter().all(|s| s)
}

/// Gaussian blobs: one unit-variance cluster per class, centers kept at
/// pairwise distance at least `spread`, class sizes as even as possible,
/// rows shuffled. Half the rows are train unless re-split afterwards.
///
/// Errors if `C < 2`, `C > n`, or center packing fails 100 draws for any
/// center.
pub fn sample_blobs(n: usize, d: usize, c: usize, spread: f64, seed: u64) -> Result<TabularTask> {
    if c < 2 {
        return Err(Error::contract("blobs need at least 2 classes"));
    }
    if c > n {
        return Err(Error::contract(format!("{c} classes cannot fill {n} rows")));
    }
    if n < 2 {
        return Err(Error::contract("blobs need at least 2 rows"));
    }
    if d == 0 {
        return Err(Error::contract("blobs need at least 1 feature"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::contract("spread must be non-negative"));
    }
    let mut rng = task_rng(seed, 0);
    blobs_with_rng(n, d, c, spread, &mut rng)
}

fn blobs_with_rng(
    n: usize,
    d: usize,
    c: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TabularTask> {
    // Rejection-sample centers from a Gaussian wide enough to make the
    // packing easy at any class count.
    let sigma = spread.max(1.0) * (c as f64).max(2.0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut placed = false;
        for _ in 0..100 {
            let cand: Vec<f64> =
                (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma).collect();
            let ok = centers.iter().all(|other| {
                let dist2: f64 = cand
                    .iter()
                    .zip(other.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dist2.sqrt() >= spread
            });
            if ok {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::contract(format!(
                "could not place {c} centers at pairwise distance {spread} in {d} dimensions \
                 after 100 draws each"
            )));
        }
    }

    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c;
        let row: Vec<f64> = centers[class]
            .iter()
            .map(|&m| m + rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        rows.push((row, class));
    }
    rows.shuffle(rng);

    let labels: Vec<usize> = rows.iter().map(|(_, l)| *l).collect();
    let flat: Vec<f64> = rows.into_iter().flat_map(|(r, _)| r).collect();
    let task = TabularTask {
        x: Matrix::from_flat(n, d, flat)?,
        targets: Targets::Classes {
            labels,
            n_classes: c,
        },
        n_train: (n / 2).max(1),
        columns: vec![ColumnKind::Numeric; d],
    };
    task.validate()?;
    Ok(task)
}
