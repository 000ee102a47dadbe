//! Exact software cost accounting for the attention kernels.
//!
//! The counters model a two-level memory: large, slow storage holding the
//! `N x D` operands, and a small fast scratchpad holding one block and the
//! running state. Every element that crosses the boundary is counted, and
//! arithmetic is charged per documented rule (see below). The closed forms
//! here are the single source of truth; the instrumented kernels in
//! [`crate::attention`] must reproduce them exactly, and the test suite
//! holds them to integer equality.
//!
//! Counting rules, applied uniformly:
//!
//! - feature map (`elu(x) + 1`): 1 flop per element;
//! - fresh matrix product `(m x k) * (k x n)`: `m * n * (2k - 1)` flops
//!   (k multiplies, k - 1 adds per output element);
//! - accumulating matrix product (`+=`, including accumulation into a
//!   zero-initialized scratch tile): `2 * m * n * k` flops;
//! - elementwise mask multiply: 1 flop per element.
//!
//! Blocked kernels run `ceil(N / B)` fixed-size iterations. Transfers are
//! counted by valid elements moved (a partial final block moves fewer), so
//! access totals are exact in `N`. Arithmetic is charged for the full
//! `B`-row tile every iteration (padded rows are zeroed but still occupy
//! compute lanes), so flop totals are exact in `B * ceil(N / B)`.
//!
//! Normalization (dividing by the feature-mapped query's mass) is a fused
//! write-back epilogue in every linear kernel and is deliberately not
//! costed: reported costs always describe the canonical unnormalized
//! computation, regardless of the `normalize` flag.

use crate::attention::AttentionVariant;
use crate::error::{Error, Result};

/// Exact operation counts for one attention evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttentionCost {
    /// Elements read from slow memory.
    pub slow_loads: u64,
    /// Elements written to slow memory.
    pub slow_stores: u64,
    /// Largest number of elements resident in slow memory at once.
    pub peak_slow_memory: u64,
    /// Floating-point operations, per the module counting rules.
    pub flops: u64,
}

impl AttentionCost {
    /// Total slow-memory accesses (loads plus stores).
    pub fn accesses(&self) -> u64 {
        self.slow_loads + self.slow_stores
    }

    /// Componentwise sum; used by the multi-head wrapper.
    pub fn add(&self, other: &AttentionCost) -> AttentionCost {
        AttentionCost {
            slow_loads: self.slow_loads + other.slow_loads,
            slow_stores: self.slow_stores + other.slow_stores,
            // Heads share the operand buffers, so residency adds.
            peak_slow_memory: self.peak_slow_memory + other.peak_slow_memory,
            flops: self.flops + other.flops,
        }
    }
}

/// Analytic cost of one attention evaluation over `n` rows of width `d`.
///
/// `block` is the tile height for the blocked variants and is ignored by
/// the others. For the context-restricted (`Pfn*`) variants this public
/// form uses the convention `n_train = n`; the kernels share the same
/// formulas parameterized by the actual train count.
///
/// Errors: unknown combinations cannot be expressed (the enum is closed),
/// but blocked variants reject `block == 0` and `block > n`.
///
/// ```
/// use lintab::attention::{cost_model, AttentionVariant};
/// // Blocked linear attention: 5*N*D accesses, 4*N*D resident elements.
/// let c = cost_model(AttentionVariant::LinearBlocked, 256, 32, 64).unwrap();
/// assert_eq!(c.accesses(), 5 * 256 * 32);
/// assert_eq!(c.peak_slow_memory, 4 * 256 * 32);
/// assert_eq!(c.flops, (64 * 32 + 4 * 64 * 32 * 32) * (256 / 64));
/// ```
pub fn cost_model(
    variant: AttentionVariant,
    n: usize,
    d: usize,
    block: usize,
) -> Result<AttentionCost> {
    match variant {
        AttentionVariant::Softmax => Ok(softmax_cost(n, n, d)),
        AttentionVariant::PfnSoftmax => Ok(softmax_cost(n, n, d)),
        AttentionVariant::LinearNaive => Ok(linear_naive_cost(n, n, d)),
        AttentionVariant::PfnLinear => Ok(pfn_linear_cost(n, n, d)),
        AttentionVariant::LinearBlocked => {
            check_block(block, n)?;
            Ok(linear_blocked_cost(n, d, block))
        }
        AttentionVariant::LinearCausalBlocked => {
            check_block(block, n)?;
            Ok(linear_causal_blocked_cost(n, d, block))
        }
    }
}

pub(crate) fn check_block(block: usize, n: usize) -> Result<()> {
    if block == 0 || block > n {
        return Err(Error::contract(format!(
            "block size {block} outside 1..={n}"
        )));
    }
    Ok(())
}

/// Quadratic softmax reference over `nq` queries and `nk` keys.
///
/// Loads Q, K, V once; the score and probability matrices are each written
/// to and read back from slow memory; the output is stored. Accesses
/// total `4*nq*nk + 2*nq*d + 2*nk*d` (`4N^2 + 4ND` when `nq = nk = N`);
/// peak residency is Q, K, V, O plus the two `nq x nk` intermediates.
/// Flops: scaled scores `nq*nk*(2d-1) + nq*nk`, stable row softmax
/// `nq*(5*nk - 2)` (max scan, shift, exp, sum, divide), weighted values
/// `nq*d*(2*nk - 1)`.
pub(crate) fn softmax_cost(nq: usize, nk: usize, d: usize) -> AttentionCost {
    let (nq64, nk64, d64) = (nq as u64, nk as u64, d as u64);
    AttentionCost {
        slow_loads: nq64 * d64 + 2 * nk64 * d64 + 2 * nq64 * nk64,
        slow_stores: 2 * nq64 * nk64 + nq64 * d64,
        peak_slow_memory: 2 * nq64 * d64 + 2 * nk64 * d64 + 2 * nq64 * nk64,
        flops: nq64 * nk64 * (2 * d64 - 1)
            + nq64 * nk64
            + nq64 * (5 * nk64 - 2)
            + nq64 * d64 * (2 * nk64 - 1),
    }
}

/// Unblocked linear attention over `nq` queries and `nk` keys.
///
/// Loads K and V to build the `d x d` state (written and read back once),
/// loads Q, materializes the feature-mapped query (one extra `nq*d` write),
/// and stores the output: `5*N*D + 2*D^2` accesses when `nq = nk = N`.
/// Peak residency is Q, K, V, O plus the state (`4ND + D^2`; the mapped
/// query reuses Q's buffer). Flops: feature maps `nk*d + nq*d`, state
/// accumulation `2*nk*d*d`, output product `nq*d*(2d - 1)` — `N*D + 4*N*D^2`
/// at `nq = nk`.
pub(crate) fn linear_naive_cost(nq: usize, nk: usize, d: usize) -> AttentionCost {
    let (nq64, nk64, d64) = (nq as u64, nk as u64, d as u64);
    AttentionCost {
        slow_loads: nk64 * d64 * 2 + nq64 * d64 + d64 * d64,
        slow_stores: d64 * d64 + nq64 * d64 * 2,
        peak_slow_memory: 2 * nq64 * d64 + 2 * nk64 * d64 + d64 * d64,
        flops: nk64 * d64 + nq64 * d64 + 2 * nk64 * d64 * d64 + nq64 * d64 * (2 * d64 - 1),
    }
}

/// Context-restricted linear attention: `nq` query rows attend to the
/// first `nk` rows. Same accounting as [`linear_naive_cost`] with the
/// key/value traffic and state work shrunk to `nk` rows.
pub(crate) fn pfn_linear_cost(nq: usize, nk: usize, d: usize) -> AttentionCost {
    linear_naive_cost(nq, nk, d)
}

/// Two-pass blocked linear attention (non-causal).
///
/// Pass 1 loads each key/value block and folds it into the on-chip state;
/// pass 2 loads each query block together with its destination block
/// (write-allocate) and stores the finished block. Loads are `4ND`, stores
/// `ND`, residency `4ND`. Flops per block index: feature maps `2*B*D`
/// split across the passes, state accumulation `2*B*D^2`, output product
/// `B*D*(2D-1)` — totalling `(B*D + 4*B*D^2) * ceil(N/B)`.
pub(crate) fn linear_blocked_cost(n: usize, d: usize, block: usize) -> AttentionCost {
    let (n64, d64, b64) = (n as u64, d as u64, block as u64);
    let t = n64.div_ceil(b64);
    AttentionCost {
        slow_loads: 4 * n64 * d64,
        slow_stores: n64 * d64,
        peak_slow_memory: 4 * n64 * d64,
        flops: (b64 * d64 + 4 * b64 * d64 * d64) * t,
    }
}

/// Single-pass blocked linear attention (causal).
///
/// Each iteration loads the query, key, value and destination blocks,
/// combines the running state with the masked in-block quadratic term, and
/// stores the finished block: loads `4ND`, stores `ND`, residency `4ND`.
/// Flops per block: feature maps `2*B*D`, in-block scores `B^2*(2D-1)`,
/// mask `B^2`, state product into the zeroed tile `2*B*D^2`, masked-score
/// product accumulated on top `2*B^2*D`, state update `2*B*D^2` —
/// totalling `(4*B^2*D + 2*B*D + 4*B*D^2) * ceil(N/B)`.
pub(crate) fn linear_causal_blocked_cost(n: usize, d: usize, block: usize) -> AttentionCost {
    let (n64, d64, b64) = (n as u64, d as u64, block as u64);
    let t = n64.div_ceil(b64);
    AttentionCost {
        slow_loads: 4 * n64 * d64,
        slow_stores: n64 * d64,
        peak_slow_memory: 4 * n64 * d64,
        flops: (4 * b64 * b64 * d64 + 2 * b64 * d64 + 4 * b64 * d64 * d64) * t,
    }
}
