//! The attention kernels.
//!
//! Five interchangeable ways to turn `(Q, K, V)` into an output matrix:
//! a quadratic softmax reference, an unblocked linear form, two blocked
//! linear forms (non-causal two-pass and causal single-pass) that move data
//! through explicit fixed-size tiles, and context-restricted forms where
//! every row attends only to the first `n_train` rows.
//!
//! The blocked kernels are instrumented: every element copied between the
//! operand buffers (slow memory) and the working tiles (fast memory) bumps
//! a counter, and arithmetic is charged per the rules in
//! [`crate::attention::cost`]. Their reported costs are required to equal
//! the closed forms exactly — including the quirk that the destination
//! block is fetched before being overwritten (write-allocate), which is
//! what makes loads `4ND` rather than `3ND`.
//!
//! All linear kernels share the feature map `elu(x) + 1` and, when
//! `normalize` is set, divide each output row by the feature-mapped
//! query's total mass against the keys (plus [`NORM_EPS`]) as a fused
//! epilogue.

use crate::attention::cost::{
    self, linear_naive_cost, pfn_linear_cost, softmax_cost, AttentionCost,
};
use crate::error::{Error, Result};
use crate::num::{elu_plus_one, Matrix};

/// Denominator guard for normalized linear attention.
pub const NORM_EPS: f64 = 1e-6;

/// Attention output plus the exact cost of producing it.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Matrix,
    pub cost: AttentionCost,
}

fn validate_qkv(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(usize, usize)> {
    if q.shape() != k.shape() {
        return Err(Error::shape("attention q/k", q.shape(), k.shape()));
    }
    if q.shape() != v.shape() {
        return Err(Error::shape("attention q/v", q.shape(), v.shape()));
    }
    let (n, d) = q.shape();
    if n == 0 || d == 0 {
        return Err(Error::contract(format!(
            "attention operands must be non-empty, got {n}x{d}"
        )));
    }
    for (name, m) in [("q", q), ("k", k), ("v", v)] {
        if !m.is_finite() {
            return Err(Error::NonFinite {
                what: format!("attention input {name}"),
            });
        }
    }
    Ok((n, d))
}

/// Quadratic softmax attention: `softmax(Q K^T / sqrt(D)) V`.
///
/// With `causal`, row `i` attends to rows `j <= i`. The reported cost is
/// the dense non-causal accounting (this variant exists as the reference
/// implementation; masking does not change what it is a reference for).
pub fn softmax_attention(q: &Matrix, k: &Matrix, v: &Matrix, causal: bool) -> Result<AttentionOutput> {
    let (n, d) = validate_qkv(q, k, v)?;
    let out = softmax_restricted(q, k, v, n, causal)?;
    Ok(AttentionOutput {
        out,
        cost: softmax_cost(n, n, d),
    })
}

/// Shared quadratic core: queries attend to the first `nk` rows of `k`/`v`;
/// with `causal`, query row `i` additionally sees only key rows `j <= i`
/// (rows `i >= nk` see the full restricted context).
fn softmax_restricted(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    nk: usize,
    causal: bool,
) -> Result<Matrix> {
    let (n, d) = q.shape();
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Matrix::zeros(n, d);
    let mut weights = vec![0.0; nk];
    for i in 0..n {
        let visible = if causal { nk.min(i + 1) } else { nk };
        let qi = q.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, w) in weights.iter_mut().enumerate().take(visible) {
            let mut dot = 0.0;
            for (a, b) in qi.iter().zip(k.row(j).iter()) {
                dot += a * b;
            }
            *w = dot * scale;
            max = max.max(*w);
        }
        let mut sum = 0.0;
        for w in weights.iter_mut().take(visible) {
            *w = (*w - max).exp();
            sum += *w;
        }
        let out_row = out.row_mut(i);
        for (j, w) in weights.iter().enumerate().take(visible) {
            let p = w / sum;
            for (o, &vv) in out_row.iter_mut().zip(v.row(j).iter()) {
                *o += p * vv;
            }
        }
    }
    Ok(out)
}

/// Unblocked linear attention with the `elu(x) + 1` feature map.
///
/// Non-causal: `O = phi(Q) (phi(K)^T V)`. Causal: prefix state, so row `i`
/// only sees rows `j <= i`. `normalize` divides row `i` by
/// `phi(q_i) . z + NORM_EPS` where `z` sums the visible feature-mapped keys.
pub fn linear_attention_naive(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    causal: bool,
    normalize: bool,
) -> Result<AttentionOutput> {
    let (n, d) = validate_qkv(q, k, v)?;
    let phi_q = q.map(elu_plus_one);
    let phi_k = k.map(elu_plus_one);
    let out = if causal {
        let mut s = Matrix::zeros(d, d);
        let mut z = vec![0.0; d];
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            // Fold row i into the state first: visibility is j <= i.
            let pk = phi_k.row(i).to_vec();
            for (a, &pki) in pk.iter().enumerate() {
                let vrow = v.row(i).to_vec();
                for (sv, &vv) in s.row_mut(a).iter_mut().zip(vrow.iter()) {
                    *sv += pki * vv;
                }
            }
            for (zv, &pki) in z.iter_mut().zip(pk.iter()) {
                *zv += pki;
            }
            let pq = phi_q.row(i);
            let mut den = 0.0;
            for (a, &pqa) in pq.iter().enumerate() {
                den += pqa * z[a];
                let srow = s.row(a).to_vec();
                let orow = out.row_mut(i);
                for (o, &sv) in orow.iter_mut().zip(srow.iter()) {
                    *o += pqa * sv;
                }
            }
            if normalize {
                let inv = 1.0 / (den + NORM_EPS);
                for o in out.row_mut(i) {
                    *o *= inv;
                }
            }
        }
        out
    } else {
        let s = phi_k.transpose().matmul(v)?;
        let mut out = phi_q.matmul(&s)?;
        if normalize {
            let z = phi_k.col_sum();
            for i in 0..n {
                let den: f64 = phi_q
                    .row(i)
                    .iter()
                    .zip(z.row(0).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let inv = 1.0 / (den + NORM_EPS);
                for o in out.row_mut(i) {
                    *o *= inv;
                }
            }
        }
        out
    };
    Ok(AttentionOutput {
        out,
        cost: linear_naive_cost(n, n, d),
    })
}

// ── blocked kernels ──────────────────────────────────────────────────────

/// Transfer counters for the blocked kernels' two-level memory model.
struct Counters {
    loads: u64,
    stores: u64,
    flops: u64,
    resident: u64,
    peak: u64,
}

impl Counters {
    fn new() -> Self {
        Counters {
            loads: 0,
            stores: 0,
            flops: 0,
            resident: 0,
            peak: 0,
        }
    }

    /// Account for a buffer living in slow memory.
    fn register(&mut self, elems: u64) {
        self.resident += elems;
        self.peak = self.peak.max(self.resident);
    }

    fn into_cost(self) -> AttentionCost {
        AttentionCost {
            slow_loads: self.loads,
            slow_stores: self.stores,
            peak_slow_memory: self.peak,
            flops: self.flops,
        }
    }
}

/// Copy rows `start..start + valid` of `src` into a zeroed `block x d`
/// tile, counting `valid * d` loads.
fn load_tile(src: &Matrix, start: usize, valid: usize, block: usize, c: &mut Counters) -> Matrix {
    let d = src.cols();
    let mut tile = Matrix::zeros(block, d);
    for r in 0..valid {
        tile.row_mut(r).copy_from_slice(src.row(start + r));
    }
    c.loads += (valid * d) as u64;
    tile
}

/// Write the first `valid` rows of `tile` to `dst` at `start`, counting
/// `valid * d` stores.
fn store_tile(dst: &mut Matrix, start: usize, valid: usize, tile: &Matrix, c: &mut Counters) {
    let d = dst.cols();
    for r in 0..valid {
        dst.row_mut(start + r).copy_from_slice(tile.row(r));
    }
    c.stores += (valid * d) as u64;
}

/// `state += a^T b` for `block x d` tiles (the `d x d` accumulation).
fn accumulate_outer(state: &mut Matrix, a: &Matrix, b: &Matrix) {
    let d = state.cols();
    for r in 0..a.rows() {
        let arow = a.row(r);
        let brow = b.row(r).to_vec();
        for (i, &av) in arow.iter().enumerate().take(d) {
            let srow = state.row_mut(i);
            for (s, &bv) in srow.iter_mut().zip(brow.iter()) {
                *s += av * bv;
            }
        }
    }
}

/// Two-pass blocked linear attention (non-causal).
///
/// Pass 1 streams key/value blocks into the on-chip `D x D` state; pass 2
/// streams query blocks, fetches each destination block (write-allocate),
/// computes the output tile against the finished state and stores it.
/// Partial final blocks transfer only their valid rows but are computed as
/// full tiles, matching the documented cost model exactly.
pub fn linear_attention_blocked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    block: usize,
    normalize: bool,
) -> Result<AttentionOutput> {
    let (n, d) = validate_qkv(q, k, v)?;
    cost::check_block(block, n)?;
    let t_blocks = n.div_ceil(block);
    let mut c = Counters::new();
    // Q, K, V and the zero-initialized destination live in slow memory.
    c.register((4 * n * d) as u64);
    let mut out = Matrix::zeros(n, d);

    let mut s = Matrix::zeros(d, d);
    let mut z = vec![0.0; d];

    for bi in 0..t_blocks {
        let start = bi * block;
        let valid = block.min(n - start);
        let k_tile = load_tile(k, start, valid, block, &mut c);
        let v_tile = load_tile(v, start, valid, block, &mut c);
        let phi_k = k_tile.map(elu_plus_one);
        c.flops += (block * d) as u64;
        accumulate_outer(&mut s, &phi_k, &v_tile);
        c.flops += (2 * block * d * d) as u64;
        if normalize {
            // Only valid rows feed the mass vector: padded key rows map to
            // ones under the feature map and must not count.
            for r in 0..valid {
                for (zv, &pv) in z.iter_mut().zip(phi_k.row(r).iter()) {
                    *zv += pv;
                }
            }
        }
    }

    for bj in 0..t_blocks {
        let start = bj * block;
        let valid = block.min(n - start);
        let q_tile = load_tile(q, start, valid, block, &mut c);
        let _dest = load_tile(&out, start, valid, block, &mut c); // write-allocate; overwritten
        let phi_q = q_tile.map(elu_plus_one);
        c.flops += (block * d) as u64;
        let mut o_tile = phi_q.matmul(&s)?;
        c.flops += (block * d * (2 * d - 1)) as u64;
        if normalize {
            for r in 0..valid {
                let den: f64 = phi_q.row(r).iter().zip(z.iter()).map(|(a, b)| a * b).sum();
                let inv = 1.0 / (den + NORM_EPS);
                for o in o_tile.row_mut(r) {
                    *o *= inv;
                }
            }
        }
        store_tile(&mut out, start, valid, &o_tile, &mut c);
    }

    Ok(AttentionOutput {
        out,
        cost: c.into_cost(),
    })
}

/// Single-pass blocked causal linear attention.
///
/// Row `i` attends to rows `j <= i`: the running state covers strictly
/// earlier blocks and a masked in-block quadratic term covers the rest.
/// Same transfer discipline as the non-causal kernel (write-allocate on
/// the destination block, valid-element counting, full-tile arithmetic).
pub fn linear_attention_causal_blocked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    block: usize,
    normalize: bool,
) -> Result<AttentionOutput> {
    let (n, d) = validate_qkv(q, k, v)?;
    cost::check_block(block, n)?;
    let t_blocks = n.div_ceil(block);
    let mut c = Counters::new();
    c.register((4 * n * d) as u64);
    let mut out = Matrix::zeros(n, d);

    let mut s = Matrix::zeros(d, d);
    let mut z = vec![0.0; d];

    for bj in 0..t_blocks {
        let start = bj * block;
        let valid = block.min(n - start);
        let k_tile = load_tile(k, start, valid, block, &mut c);
        let v_tile = load_tile(v, start, valid, block, &mut c);
        let q_tile = load_tile(q, start, valid, block, &mut c);
        let _dest = load_tile(&out, start, valid, block, &mut c); // write-allocate; overwritten

        let phi_k = k_tile.map(elu_plus_one);
        let phi_q = q_tile.map(elu_plus_one);
        c.flops += (2 * block * d) as u64;

        // In-block scores, masked to j <= i.
        let mut a = phi_q.matmul_transpose_b(&phi_k)?;
        c.flops += (block * block * (2 * d - 1)) as u64;
        for i in 0..block {
            for j in 0..block {
                let keep = if j <= i { 1.0 } else { 0.0 };
                a.set(i, j, a.get(i, j) * keep);
            }
        }
        c.flops += (block * block) as u64;

        // Contribution of earlier blocks, accumulated into the zeroed tile.
        let mut o_tile = phi_q.matmul(&s)?;
        c.flops += (2 * block * d * d) as u64;
        // Plus the masked in-block term.
        let in_block = a.matmul(&v_tile)?;
        o_tile.add_assign(&in_block)?;
        c.flops += (2 * block * block * d) as u64;

        if normalize {
            for r in 0..valid {
                let prior: f64 = phi_q.row(r).iter().zip(z.iter()).map(|(x, y)| x * y).sum();
                let within: f64 = a.row(r).iter().sum();
                let inv = 1.0 / (prior + within + NORM_EPS);
                for o in o_tile.row_mut(r) {
                    *o *= inv;
                }
            }
            for r in 0..valid {
                for (zv, &pv) in z.iter_mut().zip(phi_k.row(r).iter()) {
                    *zv += pv;
                }
            }
        }

        accumulate_outer(&mut s, &phi_k, &v_tile);
        c.flops += (2 * block * d * d) as u64;

        store_tile(&mut out, start, valid, &o_tile, &mut c);
    }

    Ok(AttentionOutput {
        out,
        cost: c.into_cost(),
    })
}

// ── context-restricted kernels ───────────────────────────────────────────

fn validate_n_train(n: usize, n_train: usize) -> Result<()> {
    if n_train == 0 || n_train > n {
        return Err(Error::contract(format!(
            "n_train {n_train} outside 1..={n}"
        )));
    }
    Ok(())
}

/// Linear attention where all `N` query rows attend only to the first
/// `n_train` key/value rows.
///
/// With `train_causal`, rows inside the restricted context additionally
/// attend causally (row `i < n_train` sees rows `j <= i`) while rows past
/// it still see the whole context — the ordered-context ablation.
pub fn pfn_linear_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    n_train: usize,
    train_causal: bool,
    normalize: bool,
) -> Result<AttentionOutput> {
    let (n, d) = validate_qkv(q, k, v)?;
    validate_n_train(n, n_train)?;
    let phi_q = q.map(elu_plus_one);
    let mut out = Matrix::zeros(n, d);

    let mut s = Matrix::zeros(d, d);
    let mut z = vec![0.0; d];
    let emit = |out_row: &mut [f64], pq: &[f64], s: &Matrix, z: &[f64]| {
        let mut den = 0.0;
        for (a, &pqa) in pq.iter().enumerate() {
            den += pqa * z[a];
            for (o, &sv) in out_row.iter_mut().zip(s.row(a).iter()) {
                *o += pqa * sv;
            }
        }
        if normalize {
            let inv = 1.0 / (den + NORM_EPS);
            for o in out_row.iter_mut() {
                *o *= inv;
            }
        }
    };

    for i in 0..n_train {
        let pk: Vec<f64> = k.row(i).iter().map(|&x| elu_plus_one(x)).collect();
        for (a, &pka) in pk.iter().enumerate() {
            let vrow = v.row(i).to_vec();
            for (sv, &vv) in s.row_mut(a).iter_mut().zip(vrow.iter()) {
                *sv += pka * vv;
            }
        }
        for (zv, &pka) in z.iter_mut().zip(pk.iter()) {
            *zv += pka;
        }
        if train_causal {
            // Prefix state: this context row sees itself and its elders.
            let pq = phi_q.row(i).to_vec();
            emit(out.row_mut(i), &pq, &s, &z);
        }
    }
    if !train_causal {
        for i in 0..n_train {
            let pq = phi_q.row(i).to_vec();
            emit(out.row_mut(i), &pq, &s, &z);
        }
    }
    for i in n_train..n {
        let pq = phi_q.row(i).to_vec();
        emit(out.row_mut(i), &pq, &s, &z);
    }

    Ok(AttentionOutput {
        out,
        cost: pfn_linear_cost(n, n_train, d),
    })
}

/// Softmax attention restricted to the first `n_train` key/value rows,
/// with the same `train_causal` semantics as [`pfn_linear_attention`].
pub fn pfn_softmax_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    n_train: usize,
    train_causal: bool,
) -> Result<AttentionOutput> {
    let (n, d) = validate_qkv(q, k, v)?;
    validate_n_train(n, n_train)?;
    let out = softmax_restricted(q, k, v, n_train, train_causal)?;
    Ok(AttentionOutput {
        out,
        cost: softmax_cost(n, n_train, d),
    })
}
