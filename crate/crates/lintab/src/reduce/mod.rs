//! Dimensionality reducers and training-row samplers for data-efficiency
//! studies.
//!
//! Both halves answer the same question — how much of the table does the
//! engine actually need? — from two directions:
//!
//! - **Reducers** ([`fit_reducer`] / [`apply_reducer`]) shrink the feature
//!   dimension: principal components of the column-centered train matrix,
//!   top singular directions of the raw train matrix, or a seeded Gaussian
//!   random projection. The transform is fitted on training rows only and
//!   then applied to train and test rows identically; the interface never
//!   sees test rows during fitting.
//! - **Samplers** ([`select_rows`]) shrink the training set: greedy
//!   farthest-first k-centers, PAM-style k-medoids, neighbor-label-entropy
//!   uncertainty scoring, or uniform random selection without replacement.
//!
//! Every method is a pure function of its inputs and the spec's seed, so
//! sweeps can run arbitrarily parallel across datasets. Selected indices
//! are always unique, in-range, and returned in ascending order; asking
//! for every row (or, with a random projection, every dimension) is an
//! exact identity so that full-budget ablation points reproduce the
//! no-reduction baseline bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::num::Matrix;

/// Default neighborhood size for the uncertainty sampler's label-entropy
/// proxy.
pub const DEFAULT_NEIGHBOR_K: usize = 10;

/// Maximum number of k-medoids improvement passes. The sampler is an
/// ablation tool, so bounded cost matters more than local optimality.
pub const MAX_MEDOID_PASSES: usize = 10;

// ---------------------------------------------------------------------------
// Reducers
// ---------------------------------------------------------------------------

/// How to shrink the feature dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerMethod {
    /// Project onto the top singular directions of the column-centered
    /// train matrix (principal components).
    Pca,
    /// Project onto the top singular directions of the raw (uncentered)
    /// train matrix.
    Svd,
    /// Multiply by a seeded Gaussian matrix with entries drawn from
    /// N(0, 1/target_dim), which preserves squared norms in expectation.
    RandomProjection,
}

impl fmt::Display for ReducerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ReducerMethod::Pca => "pca",
            ReducerMethod::Svd => "svd",
            ReducerMethod::RandomProjection => "random_projection",
        };
        f.write_str(name)
    }
}

/// A reducer request: method, output dimension, and seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducerSpec {
    pub method: ReducerMethod,
    /// Output dimension; must satisfy `1 <= target_dim <= d`.
    pub target_dim: usize,
    /// Drives the random projection draw. Ignored by the deterministic
    /// factorizations but kept for a uniform interface.
    pub seed: u64,
}

impl ReducerSpec {
    pub fn new(method: ReducerMethod, target_dim: usize, seed: u64) -> Self {
        ReducerSpec {
            method,
            target_dim,
            seed,
        }
    }
}

/// A fitted reducer: the projection basis plus whatever centering the
/// method requires. Apply with [`apply_reducer`].
#[derive(Clone, Debug)]
pub struct ReducerState {
    method: ReducerMethod,
    /// Column means of the train matrix; present only for PCA.
    col_means: Option<Matrix>,
    /// `d_in x target_dim` projection applied on the right.
    basis: Matrix,
    /// All singular values of the fitted (possibly centered) train matrix,
    /// descending; present for PCA and SVD.
    singular_values: Option<Vec<f64>>,
}

impl ReducerState {
    pub fn method(&self) -> ReducerMethod {
        self.method
    }

    /// Input dimension the reducer was fitted on.
    pub fn d_in(&self) -> usize {
        self.basis.rows()
    }

    /// Output dimension.
    pub fn target_dim(&self) -> usize {
        self.basis.cols()
    }

    /// Fraction of total variance (squared singular mass) captured by the
    /// retained directions. `None` for random projections, which have no
    /// spectrum. An all-zero train matrix has nothing to explain and
    /// reports 1.0.
    pub fn explained_variance(&self) -> Option<f64> {
        let sv = self.singular_values.as_ref()?;
        let total: f64 = sv.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return Some(1.0);
        }
        let kept: f64 = sv
            .iter()
            .take(self.target_dim())
            .map(|s| s * s)
            .sum();
        Some(kept / total)
    }
}

/// Fit a reducer on training rows only.
///
/// Errors if the train matrix is empty or `target_dim` is outside
/// `1..=d`. With `RandomProjection` and `target_dim == d` the basis is the
/// identity matrix, so the full-dimension ablation point is an exact
/// no-op rather than a random rotation.
pub fn fit_reducer(x_train: &Matrix, spec: &ReducerSpec) -> Result<ReducerState> {
    let (n, d) = x_train.shape();
    if n == 0 || d == 0 {
        return Err(Error::contract(format!(
            "fit_reducer needs a non-empty train matrix, got {n}x{d}"
        )));
    }
    if spec.target_dim == 0 || spec.target_dim > d {
        return Err(Error::contract(format!(
            "reducer target_dim {} must be in 1..={d}",
            spec.target_dim
        )));
    }
    if !x_train.is_finite() {
        return Err(Error::NonFinite {
            what: "fit_reducer train matrix".into(),
        });
    }
    let k = spec.target_dim;
    match spec.method {
        ReducerMethod::RandomProjection => {
            let basis = if k == d {
                Matrix::identity(d)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                Matrix::gaussian(d, k, (1.0 / k as f64).sqrt(), &mut rng)
            };
            Ok(ReducerState {
                method: spec.method,
                col_means: None,
                basis,
                singular_values: None,
            })
        }
        ReducerMethod::Pca => {
            let means = column_means(x_train);
            let centered = x_train.add_row_vec(&means.scale(-1.0))?;
            let (basis, singular_values) = top_right_singular_vectors(&centered, k);
            Ok(ReducerState {
                method: spec.method,
                col_means: Some(means),
                basis,
                singular_values: Some(singular_values),
            })
        }
        ReducerMethod::Svd => {
            let (basis, singular_values) = top_right_singular_vectors(x_train, k);
            Ok(ReducerState {
                method: spec.method,
                col_means: None,
                basis,
                singular_values: Some(singular_values),
            })
        }
    }
}

/// Apply a fitted reducer to any matrix with the fitted input dimension
/// (train and test rows alike).
pub fn apply_reducer(state: &ReducerState, x: &Matrix) -> Result<Matrix> {
    if x.cols() != state.d_in() {
        return Err(Error::Shape {
            op: "apply_reducer",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: state.d_in(),
            right_cols: state.target_dim(),
        });
    }
    // Full-dimension random projections keep the identity basis, and the
    // multiply below reproduces the input exactly (identity columns select
    // coordinates; no rounding is introduced).
    match &state.col_means {
        Some(means) => x.add_row_vec(&means.scale(-1.0))?.matmul(&state.basis),
        None => x.matmul(&state.basis),
    }
}

fn column_means(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    let mut means = Matrix::zeros(1, d);
    for r in 0..n {
        for (c, &value) in x.row(r).iter().enumerate() {
            means.set(0, c, means.get(0, c) + value);
        }
    }
    means.scale(1.0 / n as f64)
}

/// Top-k right singular vectors (as a `d x k` basis) and the full list of
/// singular values, descending. A thin factorization yields at most
/// `min(n, d)` directions; if `k` exceeds that, the extra basis columns
/// are zero (the data has no variance to offer in those coordinates).
fn top_right_singular_vectors(x: &Matrix, k: usize) -> (Matrix, Vec<f64>) {
    let (n, d) = x.shape();
    let na = nalgebra::DMatrix::from_row_iterator(n, d, x.data().iter().copied());
    let svd = na.svd(false, true);
    let v_t = svd
        .v_t
        .expect("svd was asked to compute right singular vectors");
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let available = v_t.nrows().min(k);
    let mut basis = Matrix::zeros(d, k);
    for j in 0..available {
        for i in 0..d {
            basis.set(i, j, v_t[(j, i)]);
        }
    }
    (basis, singular_values)
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// How to shrink the training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    /// Greedy farthest-first traversal from a seeded random start. Carries
    /// the classic guarantee: its covering radius is within 2x of the best
    /// achievable with the same budget.
    KCenters,
    /// Distance-weighted seeding followed by bounded best-swap improvement
    /// passes; minimizes the summed distance to the nearest kept row.
    KMedoids,
    /// Rows whose nearby neighbors disagree most about the label (highest
    /// label entropy among the `neighbor_k` nearest train neighbors in
    /// z-scored feature space).
    Uncertainty,
    /// Uniform without replacement.
    Random,
}

impl fmt::Display for SamplerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SamplerMethod::KCenters => "k_centers",
            SamplerMethod::KMedoids => "k_medoids",
            SamplerMethod::Uncertainty => "uncertainty",
            SamplerMethod::Random => "random",
        };
        f.write_str(name)
    }
}

/// A sampler request: method, row budget, seed, and (for the uncertainty
/// method) the neighborhood size of the entropy proxy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub method: SamplerMethod,
    /// Rows to keep; must satisfy `1 <= target_count <= n_train`.
    pub target_count: usize,
    pub seed: u64,
    /// Neighborhood size for the uncertainty proxy (ignored by the other
    /// methods).
    pub neighbor_k: usize,
}

impl SamplerSpec {
    /// A spec with the default uncertainty neighborhood
    /// ([`DEFAULT_NEIGHBOR_K`]).
    pub fn new(method: SamplerMethod, target_count: usize, seed: u64) -> Self {
        SamplerSpec {
            method,
            target_count,
            seed,
            neighbor_k: DEFAULT_NEIGHBOR_K,
        }
    }
}

/// Choose `target_count` training rows. Returns unique, ascending indices
/// into `x_train`.
///
/// Asking for every row returns the identity selection `0..n` for every
/// method, so a full-budget sweep point is exactly the unsampled baseline.
/// `y_train` must supply one class label per row; only the uncertainty
/// method reads it, but the uniform contract keeps call sites honest.
pub fn select_rows(x_train: &Matrix, y_train: &[usize], spec: &SamplerSpec) -> Result<Vec<usize>> {
    let n = x_train.rows();
    if n == 0 {
        return Err(Error::contract("select_rows needs at least one train row"));
    }
    if y_train.len() != n {
        return Err(Error::contract(format!(
            "select_rows got {} labels for {n} train rows",
            y_train.len()
        )));
    }
    if spec.target_count == 0 {
        return Err(Error::contract("sampler target_count must be at least 1"));
    }
    if spec.target_count > n {
        return Err(Error::contract(format!(
            "sampler target_count {} exceeds n_train {n}",
            spec.target_count
        )));
    }
    if !x_train.is_finite() {
        return Err(Error::NonFinite {
            what: "select_rows train matrix".into(),
        });
    }
    if spec.target_count == n {
        return Ok((0..n).collect());
    }
    let k = spec.target_count;
    let mut chosen = match spec.method {
        SamplerMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rand::seq::index::sample(&mut rng, n, k).into_vec()
        }
        SamplerMethod::KCenters => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            k_centers_select(x_train, k, &mut rng)
        }
        SamplerMethod::KMedoids => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            k_medoids_select(x_train, k, &mut rng).0
        }
        SamplerMethod::Uncertainty => {
            if spec.neighbor_k == 0 {
                return Err(Error::contract(
                    "uncertainty sampler needs neighbor_k of at least 1",
                ));
            }
            uncertainty_select(x_train, y_train, k, spec.neighbor_k)
        }
    };
    chosen.sort_unstable();
    debug_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
    Ok(chosen)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = x - y;
            diff * diff
        })
        .sum()
}

/// Greedy farthest-first: start at a random row, then repeatedly add the
/// row farthest from everything chosen so far (smallest index on ties).
fn k_centers_select(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.rows();
    let start = rng.gen_range(0..n);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(start);
    // Squared distance from each row to its nearest chosen center; the
    // argmax is the same as for plain distances.
    let mut nearest_sq: Vec<f64> = (0..n)
        .map(|i| squared_distance(x.row(i), x.row(start)))
        .collect();
    while chosen.len() < k {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in nearest_sq.iter().enumerate() {
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        chosen.push(best);
        for (i, nearest) in nearest_sq.iter_mut().enumerate() {
            let d = squared_distance(x.row(i), x.row(best));
            if d < *nearest {
                *nearest = d;
            }
        }
    }
    chosen
}

/// k-medoids: distance-weighted seeding, then up to [`MAX_MEDOID_PASSES`]
/// passes each applying the single swap (kept row out, spare row in) that
/// most reduces the summed distance to the nearest kept row. Returns the
/// medoid indices and the objective after seeding and after each accepted
/// pass (non-increasing by construction).
fn k_medoids_select(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let n = x.rows();
    // Ablation-scale inputs: the full pairwise distance matrix keeps the
    // swap search simple and exact.
    let mut dist = vec![0.0_f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(x.row(i), x.row(j)).sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let d_at = |i: usize, j: usize| dist[i * n + j];

    // Seeding: first medoid uniform, each next drawn with probability
    // proportional to squared distance from the current medoid set.
    let mut medoids: Vec<usize> = vec![rng.gen_range(0..n)];
    let mut is_medoid = vec![false; n];
    is_medoid[medoids[0]] = true;
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if is_medoid[i] {
                    return 0.0;
                }
                let nearest = medoids
                    .iter()
                    .map(|&m| d_at(i, m))
                    .fold(f64::INFINITY, f64::min);
                nearest * nearest
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let draw = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= draw {
                    pick = Some(i);
                    break;
                }
            }
            // Floating-point accumulation can leave the draw just past the
            // final positive weight; fall back to the last eligible row.
            pick.unwrap_or_else(|| {
                weights
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            // Every spare row coincides with a medoid; any choice leaves
            // the objective at zero, so take the smallest spare index.
            (0..n).find(|&i| !is_medoid[i]).expect("k < n")
        };
        medoids.push(next);
        is_medoid[next] = true;
    }

    // Nearest and second-nearest medoid distance per row, so a swap's
    // effect costs O(n) to evaluate.
    let refresh = |medoids: &[usize]| -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut nearest_m = vec![0usize; n];
        let mut nearest_d = vec![f64::INFINITY; n];
        let mut second_d = vec![f64::INFINITY; n];
        for i in 0..n {
            for &m in medoids {
                let d = d_at(i, m);
                if d < nearest_d[i] {
                    second_d[i] = nearest_d[i];
                    nearest_d[i] = d;
                    nearest_m[i] = m;
                } else if d < second_d[i] {
                    second_d[i] = d;
                }
            }
        }
        (nearest_m, nearest_d, second_d)
    };

    let (mut nearest_m, mut nearest_d, mut second_d) = refresh(&medoids);
    let objective = |nearest_d: &[f64]| nearest_d.iter().sum::<f64>();
    let mut objectives = vec![objective(&nearest_d)];

    for _pass in 0..MAX_MEDOID_PASSES {
        let mut best_delta = 0.0_f64;
        let mut best_swap: Option<(usize, usize)> = None;
        for (out_idx, &m_out) in medoids.iter().enumerate() {
            for (h, &h_is_medoid) in is_medoid.iter().enumerate() {
                if h_is_medoid {
                    continue;
                }
                let mut delta = 0.0;
                for i in 0..n {
                    let d_ih = d_at(i, h);
                    let new_d = if nearest_m[i] == m_out {
                        d_ih.min(second_d[i])
                    } else {
                        d_ih.min(nearest_d[i])
                    };
                    delta += new_d - nearest_d[i];
                }
                if delta < best_delta - 1e-12 {
                    best_delta = delta;
                    best_swap = Some((out_idx, h));
                }
            }
        }
        let Some((out_idx, h)) = best_swap else {
            break;
        };
        is_medoid[medoids[out_idx]] = false;
        is_medoid[h] = true;
        medoids[out_idx] = h;
        let refreshed = refresh(&medoids);
        nearest_m = refreshed.0;
        nearest_d = refreshed.1;
        second_d = refreshed.2;
        objectives.push(objective(&nearest_d));
    }
    (medoids, objectives)
}

/// Uncertainty proxy: z-score the features, score each row by the entropy
/// of the labels among its `neighbor_k` nearest other rows, and keep the
/// highest-entropy rows (ties broken toward smaller row indices).
fn uncertainty_select(x: &Matrix, y: &[usize], k: usize, neighbor_k: usize) -> Vec<usize> {
    let (n, d) = x.shape();
    // z-score per column; constant columns contribute nothing to distance.
    let mut z = x.clone();
    for c in 0..d {
        let mean = (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|r| {
                let diff = x.get(r, c) - mean;
                diff * diff
            })
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        for r in 0..n {
            let v = if std > 0.0 { (x.get(r, c) - mean) / std } else { 0.0 };
            z.set(r, c, v);
        }
    }
    let kk = neighbor_k.min(n - 1);
    let n_classes = y.iter().copied().max().unwrap_or(0) + 1;
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        // Nearest other rows, ties toward smaller indices.
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (squared_distance(z.row(i), z.row(j)), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut counts = vec![0usize; n_classes];
        for &(_, j) in order.iter().take(kk) {
            counts[y[j]] += 1;
        }
        let total = kk as f64;
        let entropy: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum();
        scored.push((entropy, i));
    }
    // Highest entropy first; equal scores keep index order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{sample_blobs, Targets};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn seeded_gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::gaussian(rows, cols, 1.0, &mut rng)
    }

    fn pairwise_distances(x: &Matrix) -> Vec<f64> {
        let n = x.rows();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(squared_distance(x.row(i), x.row(j)).sqrt());
            }
        }
        out
    }

    #[test]
    fn full_rank_pca_is_a_rotation_of_the_centered_data() {
        let x = seeded_gaussian(30, 4, 11);
        let state = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Pca, 4, 0)).unwrap();
        let projected = apply_reducer(&state, &x).unwrap();
        assert_eq!(projected.shape(), (30, 4));

        // Distances among rows are those of the centered data (centering
        // itself is distance-preserving), so they must match the originals.
        let before = pairwise_distances(&x);
        let after = pairwise_distances(&projected);
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-6, "distance moved: {b} -> {a}");
        }

        // The basis is orthonormal at full rank, so projecting back and
        // re-adding the means reconstructs the input.
        let means = column_means(&x);
        let reconstructed = projected
            .matmul(&state.basis.transpose())
            .unwrap()
            .add_row_vec(&means)
            .unwrap();
        assert!(reconstructed.max_abs_diff(&x) < 1e-6);
        let ev = state.explained_variance().unwrap();
        assert!((ev - 1.0).abs() < 1e-12, "full rank must explain all variance");
    }

    #[test]
    fn rank_one_data_is_fully_explained_by_one_component() {
        // Rows are multiples of a single direction, so centering keeps the
        // matrix rank one and the top component carries everything.
        let direction = [1.0, -2.0, 0.5, 3.0];
        let mut x = Matrix::zeros(20, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in 0..20 {
            let t: f64 = rng.gen_range(-2.0..2.0);
            for (c, &dir) in direction.iter().enumerate() {
                x.set(r, c, t * dir);
            }
        }
        let state = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Pca, 1, 0)).unwrap();
        let ev = state.explained_variance().unwrap();
        assert!(ev > 1.0 - 1e-9, "explained variance {ev} should be ~1");
        assert_eq!(apply_reducer(&state, &x).unwrap().shape(), (20, 1));
    }

    #[test]
    fn svd_keeps_the_offset_direction_that_pca_centers_away() {
        // A large constant offset dominates the raw spectrum but vanishes
        // under centering, so the two methods keep different directions.
        let mut x = seeded_gaussian(40, 3, 5);
        for r in 0..40 {
            x.set(r, 0, x.get(r, 0) + 50.0);
        }
        let pca = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Pca, 1, 0)).unwrap();
        let svd = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Svd, 1, 0)).unwrap();
        // The raw top direction is essentially the offset axis.
        assert!(svd.basis.get(0, 0).abs() > 0.99);
        let p_out = apply_reducer(&pca, &x).unwrap();
        let s_out = apply_reducer(&svd, &x).unwrap();
        assert!(p_out.max_abs_diff(&s_out) > 1.0);

        // At full rank the uncentered factorization is a plain rotation.
        let full = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Svd, 3, 0)).unwrap();
        let rotated = apply_reducer(&full, &x).unwrap();
        let before = pairwise_distances(&x);
        let after = pairwise_distances(&rotated);
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-6);
        }
    }

    #[test]
    fn full_dimension_random_projection_is_the_identity() {
        let x = seeded_gaussian(15, 6, 9);
        let state =
            fit_reducer(&x, &ReducerSpec::new(ReducerMethod::RandomProjection, 6, 42)).unwrap();
        let out = apply_reducer(&state, &x).unwrap();
        assert_eq!(out.data(), x.data(), "identity projection must be exact");
    }

    #[test]
    fn random_projection_preserves_pairwise_distances_empirically() {
        // 200 points in 100 dimensions projected to 50. Each pair's
        // squared-distance ratio is a chi-square(50)/50 draw (std ~0.2), so
        // plain-distance ratios concentrate twice as tightly: essentially
        // all pairs land within +-30% on distances, while on squared
        // distances the honest expectation is only ~87% (the +-30% band is
        // ~1.5 sigma there). Both levels are asserted.
        let x = seeded_gaussian(200, 100, 17);
        let state =
            fit_reducer(&x, &ReducerSpec::new(ReducerMethod::RandomProjection, 50, 23)).unwrap();
        let projected = apply_reducer(&state, &x).unwrap();
        let before = pairwise_distances(&x);
        let after = pairwise_distances(&projected);
        let n_pairs = before.len();
        assert_eq!(n_pairs, 200 * 199 / 2);
        let mut within_dist = 0usize;
        let mut within_sq = 0usize;
        for (b, a) in before.iter().zip(&after) {
            if (a / b - 1.0).abs() <= 0.3 {
                within_dist += 1;
            }
            if ((a * a) / (b * b) - 1.0).abs() <= 0.3 {
                within_sq += 1;
            }
        }
        let frac_dist = within_dist as f64 / n_pairs as f64;
        let frac_sq = within_sq as f64 / n_pairs as f64;
        assert!(frac_dist >= 0.95, "distance ratios within 30%: {frac_dist}");
        assert!(frac_sq >= 0.80, "squared ratios within 30%: {frac_sq}");
    }

    #[test]
    fn reducers_are_deterministic_under_a_fixed_seed() {
        let x = seeded_gaussian(25, 8, 2);
        for method in [
            ReducerMethod::Pca,
            ReducerMethod::Svd,
            ReducerMethod::RandomProjection,
        ] {
            let spec = ReducerSpec::new(method, 3, 7);
            let a = fit_reducer(&x, &spec).unwrap();
            let b = fit_reducer(&x, &spec).unwrap();
            assert_eq!(a.basis.data(), b.basis.data(), "{method} not deterministic");
        }
        // A different seed draws a different projection.
        let a = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::RandomProjection, 3, 1)).unwrap();
        let b = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::RandomProjection, 3, 2)).unwrap();
        assert!(a.basis.max_abs_diff(&b.basis) > 1e-6);
    }

    #[test]
    fn reducer_contract_violations_are_rejected() {
        let x = seeded_gaussian(10, 4, 1);
        let empty = Matrix::zeros(0, 4);
        assert!(fit_reducer(&empty, &ReducerSpec::new(ReducerMethod::Pca, 2, 0)).is_err());
        assert!(fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Pca, 0, 0)).is_err());
        assert!(fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Pca, 5, 0)).is_err());
        let state = fit_reducer(&x, &ReducerSpec::new(ReducerMethod::Pca, 2, 0)).unwrap();
        let wrong_width = seeded_gaussian(3, 5, 1);
        assert!(apply_reducer(&state, &wrong_width).is_err());
    }

    #[test]
    fn full_budget_selection_is_the_identity_for_every_method() {
        let x = seeded_gaussian(8, 3, 4);
        let y = vec![0, 1, 0, 1, 0, 1, 0, 1];
        for method in [
            SamplerMethod::KCenters,
            SamplerMethod::KMedoids,
            SamplerMethod::Uncertainty,
            SamplerMethod::Random,
        ] {
            let picked = select_rows(&x, &y, &SamplerSpec::new(method, 8, 99)).unwrap();
            assert_eq!(picked, (0..8).collect::<Vec<_>>(), "{method}");
        }
    }

    /// Membership oracle: with two well-separated blobs and a budget of
    /// two, farthest-first must take one row from each blob.
    #[test]
    fn k_centers_covers_both_blobs() {
        for seed in 0..5u64 {
            let task = sample_blobs(40, 2, 2, 8.0, seed).unwrap();
            let labels = match &task.targets {
                Targets::Classes { labels, .. } => labels.clone(),
                Targets::Reals(_) => unreachable!("blobs are class-labeled"),
            };
            let picked =
                select_rows(&task.x, &labels, &SamplerSpec::new(SamplerMethod::KCenters, 2, seed))
                    .unwrap();
            assert_eq!(picked.len(), 2);
            assert_ne!(
                labels[picked[0]], labels[picked[1]],
                "seed {seed}: both centers landed in one blob"
            );
        }
    }

    #[test]
    fn k_medoids_covers_both_blobs() {
        for seed in 0..5u64 {
            let task = sample_blobs(40, 2, 2, 8.0, seed).unwrap();
            let labels = match &task.targets {
                Targets::Classes { labels, .. } => labels.clone(),
                Targets::Reals(_) => unreachable!("blobs are class-labeled"),
            };
            let picked =
                select_rows(&task.x, &labels, &SamplerSpec::new(SamplerMethod::KMedoids, 2, seed))
                    .unwrap();
            assert_ne!(labels[picked[0]], labels[picked[1]]);
        }
    }

    /// Exhaustive oracle for the classic greedy bound: on instances small
    /// enough to brute-force, the greedy covering radius is within 2x of
    /// the best radius any same-size subset achieves.
    #[test]
    fn k_centers_radius_is_within_twice_the_brute_force_optimum() {
        fn covering_radius(x: &Matrix, centers: &[usize]) -> f64 {
            (0..x.rows())
                .map(|i| {
                    centers
                        .iter()
                        .map(|&c| squared_distance(x.row(i), x.row(c)))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0_f64, f64::max)
                .sqrt()
        }
        fn best_radius(x: &Matrix, k: usize) -> f64 {
            // Walk every k-subset of rows.
            let n = x.rows();
            let mut best = f64::INFINITY;
            let mut subset: Vec<usize> = (0..k).collect();
            loop {
                let r = covering_radius(x, &subset);
                if r < best {
                    best = r;
                }
                // Advance to the next combination in lexicographic order.
                let mut i = k;
                loop {
                    if i == 0 {
                        return best;
                    }
                    i -= 1;
                    if subset[i] != i + n - k {
                        break;
                    }
                }
                subset[i] += 1;
                for j in (i + 1)..k {
                    subset[j] = subset[j - 1] + 1;
                }
            }
        }

        let y12 = [0usize; 12];
        for n in [6usize, 9, 12] {
            for k in [1usize, 2, 3] {
                for seed in 0..4u64 {
                    let x = seeded_gaussian(n, 2, 1000 + seed * 31 + (n * 10 + k) as u64);
                    let picked =
                        select_rows(&x, &y12[..n], &SamplerSpec::new(SamplerMethod::KCenters, k, seed))
                            .unwrap();
                    let greedy = covering_radius(&x, &picked);
                    let optimal = best_radius(&x, k);
                    assert!(
                        greedy <= 2.0 * optimal + 1e-9,
                        "n={n} k={k} seed={seed}: greedy {greedy} vs optimal {optimal}"
                    );
                }
            }
        }
    }

    #[test]
    fn k_medoids_objective_never_increases_across_passes() {
        for seed in 0..6u64 {
            let task = sample_blobs(60, 3, 3, 4.0, 100 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (medoids, objectives) = k_medoids_select(&task.x, 4, &mut rng);
            assert_eq!(medoids.len(), 4);
            assert!(!objectives.is_empty());
            for w in objectives.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-9,
                    "seed {seed}: objective rose {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn uncertainty_picks_the_rows_whose_neighbors_disagree() {
        // Two tight pure-label clusters far apart, plus four interleaved
        // rows in the middle whose neighborhoods mix labels. Only the
        // middle rows have positive entropy, so they are chosen first.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            rows.push(vec![i as f64 * 0.01]);
            labels.push(0);
        }
        for i in 0..8 {
            rows.push(vec![100.0 + i as f64 * 0.01]);
            labels.push(1);
        }
        for i in 0..4 {
            rows.push(vec![50.0 + i as f64 * 0.01]);
            labels.push(i % 2);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let mut spec = SamplerSpec::new(SamplerMethod::Uncertainty, 4, 0);
        spec.neighbor_k = 3;
        let picked = select_rows(&x, &labels, &spec).unwrap();
        assert_eq!(picked, vec![16, 17, 18, 19]);
    }

    #[test]
    fn uniform_labels_make_uncertainty_selection_an_index_prefix() {
        // Every neighborhood is pure, scores tie at zero, and the index
        // tie-break keeps the first rows.
        let x = seeded_gaussian(12, 3, 8);
        let y = vec![0usize; 12];
        let picked = select_rows(&x, &y, &SamplerSpec::new(SamplerMethod::Uncertainty, 5, 0)).unwrap();
        assert_eq!(picked, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn random_selection_is_seed_deterministic() {
        let x = seeded_gaussian(50, 4, 6);
        let y = vec![0usize; 50];
        let a = select_rows(&x, &y, &SamplerSpec::new(SamplerMethod::Random, 10, 5)).unwrap();
        let b = select_rows(&x, &y, &SamplerSpec::new(SamplerMethod::Random, 10, 5)).unwrap();
        let c = select_rows(&x, &y, &SamplerSpec::new(SamplerMethod::Random, 10, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampler_contract_violations_are_rejected() {
        let x = seeded_gaussian(10, 2, 3);
        let y = vec![0usize; 10];
        assert!(select_rows(&x, &y, &SamplerSpec::new(SamplerMethod::Random, 0, 0)).is_err());
        assert!(select_rows(&x, &y, &SamplerSpec::new(SamplerMethod::Random, 11, 0)).is_err());
        assert!(select_rows(&x, &y[..9], &SamplerSpec::new(SamplerMethod::Random, 5, 0)).is_err());
        let mut spec = SamplerSpec::new(SamplerMethod::Uncertainty, 5, 0);
        spec.neighbor_k = 0;
        assert!(select_rows(&x, &y, &spec).is_err());
    }

    proptest! {
        /// Every method returns unique ascending in-range indices of the
        /// requested length, identically on repeated calls.
        #[test]
        fn selections_are_valid_and_deterministic(
            n in 2usize..30,
            k_frac in 0.05f64..1.0,
            seed in 0u64..1000,
            method_pick in 0usize..4,
        ) {
            let method = [
                SamplerMethod::KCenters,
                SamplerMethod::KMedoids,
                SamplerMethod::Uncertainty,
                SamplerMethod::Random,
            ][method_pick];
            let k = ((n as f64 * k_frac).ceil() as usize).clamp(1, n);
            let x = seeded_gaussian(n, 3, seed.wrapping_mul(7919));
            let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let spec = SamplerSpec::new(method, k, seed);
            let picked = select_rows(&x, &y, &spec).unwrap();
            prop_assert_eq!(picked.len(), k);
            prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(picked.iter().all(|&i| i < n));
            let again = select_rows(&x, &y, &spec).unwrap();
            prop_assert_eq!(picked, again);
        }
    }
}
