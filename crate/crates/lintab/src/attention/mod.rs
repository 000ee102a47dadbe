//! Swappable attention kernels with exact cost accounting.
//!
//! One request type, six variants, one output shape. Pick a variant, call
//! [`attend`], get the output matrix plus an [`AttentionCost`] that the
//! analytic [`cost_model`] reproduces exactly. The blocked kernels count
//! real block transfers; the unblocked ones report their documented
//! closed forms.
//!
//! ```
//! use lintab::attention::{attend, AttentionRequest, AttentionVariant};
//! use lintab::num::Matrix;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let q = Matrix::gaussian(128, 16, 1.0, &mut rng);
//! let k = Matrix::gaussian(128, 16, 1.0, &mut rng);
//! let v = Matrix::gaussian(128, 16, 1.0, &mut rng);
//!
//! let blocked = attend(&AttentionRequest {
//!     variant: AttentionVariant::LinearBlocked,
//!     block: 32,
//!     ..AttentionRequest::new(&q, &k, &v)
//! }).unwrap();
//! assert_eq!(blocked.cost.accesses(), 5 * 128 * 16);
//!
//! let naive = attend(&AttentionRequest::new(&q, &k, &v)).unwrap();
//! assert!(blocked.out.max_rel_diff(&naive.out, 1e-9) < 1e-10);
//! ```

mod cost;
mod kernels;

pub use cost::{cost_model, AttentionCost};
pub use kernels::{
    linear_attention_blocked, linear_attention_causal_blocked, linear_attention_naive,
    pfn_linear_attention, pfn_softmax_attention, softmax_attention, AttentionOutput, NORM_EPS,
};

use crate::error::{Error, Result};
use crate::num::Matrix;
use serde::{Deserialize, Serialize};

/// Which kernel computes the attention output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    /// Quadratic softmax reference.
    Softmax,
    /// Unblocked linear attention.
    LinearNaive,
    /// Two-pass blocked linear attention (non-causal).
    LinearBlocked,
    /// Single-pass blocked linear attention (causal).
    LinearCausalBlocked,
    /// Linear attention restricted to the first `n_train` rows.
    PfnLinear,
    /// Softmax attention restricted to the first `n_train` rows.
    PfnSoftmax,
}

impl AttentionVariant {
    /// All variants, for exhaustive sweeps.
    pub const ALL: [AttentionVariant; 6] = [
        AttentionVariant::Softmax,
        AttentionVariant::LinearNaive,
        AttentionVariant::LinearBlocked,
        AttentionVariant::LinearCausalBlocked,
        AttentionVariant::PfnLinear,
        AttentionVariant::PfnSoftmax,
    ];
}

/// One attention evaluation. Build with [`AttentionRequest::new`] and
/// override fields as needed.
#[derive(Clone)]
pub struct AttentionRequest<'a> {
    pub q: &'a Matrix,
    pub k: &'a Matrix,
    pub v: &'a Matrix,
    pub variant: AttentionVariant,
    /// Tile height for the blocked variants; ignored otherwise.
    pub block: usize,
    /// Causal masking. For the context-restricted variants this masks the
    /// context segment only (the ordered-context ablation); for the others
    /// it is plain causal attention. Rejected for `LinearBlocked`, which
    /// has a dedicated causal sibling.
    pub causal: bool,
    /// Divide each output row by the feature-mapped query mass (linear
    /// variants only; the softmax forms are inherently normalized).
    pub normalize: bool,
    /// Context length for the restricted variants; ignored otherwise.
    pub n_train: usize,
}

/// Default tile height for blocked kernels.
pub const DEFAULT_BLOCK: usize = 64;

impl<'a> AttentionRequest<'a> {
    /// Request with the defaults: unblocked linear attention, block 64,
    /// non-causal, unnormalized, full context.
    pub fn new(q: &'a Matrix, k: &'a Matrix, v: &'a Matrix) -> Self {
        AttentionRequest {
            q,
            k,
            v,
            variant: AttentionVariant::LinearNaive,
            block: DEFAULT_BLOCK,
            causal: false,
            normalize: false,
            n_train: q.rows(),
        }
    }
}

/// Dispatch a request to its kernel.
pub fn attend(req: &AttentionRequest) -> Result<AttentionOutput> {
    match req.variant {
        AttentionVariant::Softmax => softmax_attention(req.q, req.k, req.v, req.causal),
        AttentionVariant::LinearNaive => {
            linear_attention_naive(req.q, req.k, req.v, req.causal, req.normalize)
        }
        AttentionVariant::LinearBlocked => {
            if req.causal {
                return Err(Error::contract(
                    "LinearBlocked is non-causal; use LinearCausalBlocked",
                ));
            }
            linear_attention_blocked(req.q, req.k, req.v, req.block, req.normalize)
        }
        AttentionVariant::LinearCausalBlocked => {
            linear_attention_causal_blocked(req.q, req.k, req.v, req.block, req.normalize)
        }
        AttentionVariant::PfnLinear => {
            pfn_linear_attention(req.q, req.k, req.v, req.n_train, req.causal, req.normalize)
        }
        AttentionVariant::PfnSoftmax => {
            pfn_softmax_attention(req.q, req.k, req.v, req.n_train, req.causal)
        }
    }
}

/// Run a request independently on `heads` equal column slices of `q`, `k`,
/// `v`, concatenating the slice outputs and summing their costs.
///
/// The width must divide evenly; heads never mix columns.
pub fn multi_head_attend(req: &AttentionRequest, heads: usize) -> Result<AttentionOutput> {
    let d = req.q.cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::contract(format!(
            "width {d} not divisible into {heads} heads"
        )));
    }
    let dh = d / heads;
    let mut out: Option<Matrix> = None;
    let mut total = AttentionCost::default();
    for h in 0..heads {
        let q = slice_cols(req.q, h * dh, dh);
        let k = slice_cols(req.k, h * dh, dh);
        let v = slice_cols(req.v, h * dh, dh);
        let head_req = AttentionRequest {
            q: &q,
            k: &k,
            v: &v,
            ..req.clone()
        };
        let res = attend(&head_req)?;
        total = total.add(&res.cost);
        out = Some(match out {
            None => res.out,
            Some(acc) => concat_cols(&acc, &res.out),
        });
    }
    Ok(AttentionOutput {
        out: out.expect("heads >= 1"),
        cost: total,
    })
}

fn slice_cols(m: &Matrix, start: usize, len: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), len);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
    }
    out
}

fn concat_cols(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows(), b.rows());
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        out.row_mut(r)[..a.cols()].copy_from_slice(a.row(r));
        out.row_mut(r)[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}
