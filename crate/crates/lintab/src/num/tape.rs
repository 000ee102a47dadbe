//! Reverse-mode autodiff on an explicit tape.
//!
//! A [`Tape`] records every primitive as it executes; node ids are indices
//! into the tape, so construction order is already a topological order and
//! [`Tape::backward`] is a single reverse sweep. Each primitive has a
//! hand-written analytic backward rule; [`finite_diff_check`] validates any
//! composition of them against central finite differences.
//!
//! ```
//! use lintab::num::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", Matrix::from_rows(&[vec![0.5], vec![-0.25]]).unwrap());
//! let x = tape.constant(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
//! let y = tape.matmul(x, w).unwrap();            // 1x1: [0.5 - 0.5] = 0
//! let loss = tape.mean_cross_entropy(y, &[0], 1).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.by_name(&tape, "w").unwrap().shape(), (2, 1));
//! ```

use crate::error::{Error, Result};
use crate::num::func;
use crate::num::Matrix;

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

enum Op {
    Leaf,
    /// `a * b`
    MatMul(NodeId, NodeId),
    /// `a + b`, same shape
    Add(NodeId, NodeId),
    /// `a + row` with `row` a `1 x cols` matrix broadcast over rows of `a`
    AddRow(NodeId, NodeId),
    /// elementwise `a * b`, same shape
    ElemMul(NodeId, NodeId),
    /// `c * a` for a compile-time constant `c`
    Scale(NodeId, f64),
    Transpose(NodeId),
    EluPlusOne(NodeId),
    Gelu(NodeId),
    /// row-wise layer norm with `1 x cols` gain and bias
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    SoftmaxRows(NodeId),
    SliceRows {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatRows(NodeId, NodeId),
    /// `out[i][j] = num[i][j] / (den[i][0] + eps)` with `den` a column
    DivColPlusEps {
        num: NodeId,
        den: NodeId,
        eps: f64,
    },
    /// column sums, `r x c -> 1 x c`
    ColSum(NodeId),
    /// row sums, `r x c -> r x 1`
    RowSum(NodeId),
    /// gather rows of `table` at the given indices
    EmbedRows {
        table: NodeId,
        idx: Vec<usize>,
    },
    /// mean cross-entropy over rows, reading only the first `n_classes`
    /// columns of the logits
    MeanCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        n_classes: usize,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
    param_name: Option<String>,
}

/// Recorded computation; append-only, ids are topologically ordered.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node id. Nodes the
/// loss does not depend on (or that need no gradient) hold `None`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to node `id`, if tracked.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient for the parameter registered under `name`.
    pub fn by_name<'a>(&'a self, tape: &Tape, name: &str) -> Option<&'a Matrix> {
        let id = tape
            .nodes
            .iter()
            .position(|n| n.param_name.as_deref() == Some(name))?;
        self.get(id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held at node `id`.
    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param_name: None,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Leaf that does not require a gradient (inputs, masks, constants).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Named trainable leaf. Gradients are retrievable via
    /// [`Gradients::by_name`].
    pub fn param(&mut self, name: &str, value: Matrix) -> NodeId {
        let id = self.push(value, Op::Leaf, true);
        self.nodes[id].param_name = Some(name.to_string());
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.add(&self.nodes[b].value)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Broadcast-add a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.nodes[a].value.shape();
        if self.nodes[row].value.shape() != (1, c) {
            return Err(Error::shape("add_row", (r, c), self.nodes[row].value.shape()));
        }
        let mut value = self.nodes[a].value.clone();
        for i in 0..r {
            let rv = self.nodes[row].value.row(0).to_vec();
            for (v, b) in value.row_mut(i).iter_mut().zip(rv.iter()) {
                *v += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.mul_elem(&self.nodes[b].value)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ElemMul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a].value.scale(c);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.transpose();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn elu_plus_one(&mut self, a: NodeId) -> NodeId {
        let value = func::elu_plus_one_mat(&self.nodes[a].value);
        let ng = self.needs(a);
        self.push(value, Op::EluPlusOne(a), ng)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = func::gelu_mat(&self.nodes[a].value);
        let ng = self.needs(a);
        self.push(value, Op::Gelu(a), ng)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let value = func::layer_norm_rows(
            &self.nodes[x].value,
            &self.nodes[gain].value,
            &self.nodes[bias].value,
            eps,
        )?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, eps }, ng))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = func::softmax_rows(&self.nodes[a].value);
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let value = self.nodes[x].value.slice_rows(start, len)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceRows { x, start, len }, ng))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.concat_rows(&self.nodes[b].value)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatRows(a, b), ng))
    }

    /// Divide each row of `num` by the matching entry of the column `den`
    /// plus `eps`. `den` must be `rows x 1`.
    pub fn div_col_plus_eps(&mut self, num: NodeId, den: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.nodes[num].value.shape();
        if self.nodes[den].value.shape() != (r, 1) {
            return Err(Error::shape(
                "div_col_plus_eps",
                (r, c),
                self.nodes[den].value.shape(),
            ));
        }
        let mut value = self.nodes[num].value.clone();
        for i in 0..r {
            let d = self.nodes[den].value.get(i, 0) + eps;
            for v in value.row_mut(i) {
                *v /= d;
            }
        }
        let ng = self.needs(num) || self.needs(den);
        Ok(self.push(value, Op::DivColPlusEps { num, den, eps }, ng))
    }

    pub fn col_sum(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.col_sum();
        let ng = self.needs(a);
        self.push(value, Op::ColSum(a), ng)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.row_sum();
        let ng = self.needs(a);
        self.push(value, Op::RowSum(a), ng)
    }

    /// Gather rows of `table` at `idx` (a lookup-table read; gradients
    /// scatter-add back into the table).
    pub fn embed_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let t = &self.nodes[table].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::contract(format!(
                "embed_rows: index {bad} out of range for table with {} rows",
                t.rows()
            )));
        }
        let mut value = Matrix::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(i));
        }
        let ng = self.needs(table);
        Ok(self.push(
            value,
            Op::EmbedRows {
                table,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Mean cross-entropy over rows of `logits`, reading only the first
    /// `n_classes` columns. `targets[i]` is row `i`'s class. Returns a
    /// `1 x 1` node.
    pub fn mean_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        n_classes: usize,
    ) -> Result<NodeId> {
        let l = &self.nodes[logits].value;
        if targets.len() != l.rows() {
            return Err(Error::contract(format!(
                "mean_cross_entropy: {} targets for {} logit rows",
                targets.len(),
                l.rows()
            )));
        }
        if n_classes == 0 || n_classes > l.cols() {
            return Err(Error::contract(format!(
                "mean_cross_entropy: n_classes {} outside 1..={}",
                n_classes,
                l.cols()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n_classes) {
            return Err(Error::contract(format!(
                "mean_cross_entropy: target {bad} >= n_classes {n_classes}"
            )));
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &l.row(r)[..n_classes];
            total += func::log_sum_exp(row) - row[t];
        }
        let value = Matrix::from_flat(1, 1, vec![total / targets.len() as f64])?;
        let ng = self.needs(logits);
        Ok(self.push(
            value,
            Op::MeanCrossEntropy {
                logits,
                targets: targets.to_vec(),
                n_classes,
            },
            ng,
        ))
    }

    /// Reverse sweep from the scalar node `root`. Returns per-node
    /// gradients for every node the loss depends on that needs one.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward: root must be 1x1, got {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.push_back(id, &g, &mut grads)?;
            // Params keep their gradient; interior nodes release theirs.
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) -> Result<()> {
        match &mut grads[id] {
            Some(g) => g.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn push_back(&self, id: NodeId, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul_transpose_b(&self.nodes[*b].value)?;
                    Self::accumulate(grads, *a, da)?;
                }
                if self.needs(*b) {
                    let db = self.nodes[*a].value.transpose().matmul(g)?;
                    Self::accumulate(grads, *b, db)?;
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, g.clone())?;
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if self.needs(*row) {
                    Self::accumulate(grads, *row, g.col_sum())?;
                }
            }
            Op::ElemMul(a, b) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.mul_elem(&self.nodes[*b].value)?)?;
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, g.mul_elem(&self.nodes[*a].value)?)?;
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.scale(*c))?;
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.transpose())?;
                }
            }
            Op::EluPlusOne(a) => {
                if self.needs(*a) {
                    let d = self.nodes[*a].value.map(func::elu_plus_one_deriv);
                    Self::accumulate(grads, *a, g.mul_elem(&d)?)?;
                }
            }
            Op::Gelu(a) => {
                if self.needs(*a) {
                    let d = self.nodes[*a].value.map(func::gelu_deriv);
                    Self::accumulate(grads, *a, g.mul_elem(&d)?)?;
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                self.layer_norm_backward(*x, *gain, *bias, *eps, g, grads)?;
            }
            Op::SoftmaxRows(a) => {
                if self.needs(*a) {
                    // dx = p * (g - rowsum(g * p)) rowwise
                    let p = &self.nodes[id].value;
                    let gp = g.mul_elem(p)?;
                    let s = gp.row_sum();
                    let mut dx = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let si = s.get(r, 0);
                        for c in 0..p.cols() {
                            dx.set(r, c, p.get(r, c) * (g.get(r, c) - si));
                        }
                    }
                    Self::accumulate(grads, *a, dx)?;
                }
            }
            Op::SliceRows { x, start, len } => {
                if self.needs(*x) {
                    let (rows, cols) = self.nodes[*x].value.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    for r in 0..*len {
                        dx.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    Self::accumulate(grads, *x, dx)?;
                }
            }
            Op::ConcatRows(a, b) => {
                let ra = self.nodes[*a].value.rows();
                let rb = self.nodes[*b].value.rows();
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.slice_rows(0, ra)?)?;
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, g.slice_rows(ra, rb)?)?;
                }
            }
            Op::DivColPlusEps { num, den, eps } => {
                let out = &self.nodes[id].value;
                let d = &self.nodes[*den].value;
                if self.needs(*num) {
                    let mut dn = g.clone();
                    for r in 0..dn.rows() {
                        let inv = 1.0 / (d.get(r, 0) + eps);
                        for v in dn.row_mut(r) {
                            *v *= inv;
                        }
                    }
                    Self::accumulate(grads, *num, dn)?;
                }
                if self.needs(*den) {
                    // d/dden[i] = -sum_j g[i][j] * out[i][j] / (den[i] + eps)
                    let go = g.mul_elem(out)?;
                    let mut dd = go.row_sum();
                    for r in 0..dd.rows() {
                        let inv = 1.0 / (d.get(r, 0) + eps);
                        let v = dd.get(r, 0);
                        dd.set(r, 0, -v * inv);
                    }
                    Self::accumulate(grads, *den, dd)?;
                }
            }
            Op::ColSum(a) => {
                if self.needs(*a) {
                    let (rows, cols) = self.nodes[*a].value.shape();
                    let mut da = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        da.row_mut(r).copy_from_slice(g.row(0));
                    }
                    Self::accumulate(grads, *a, da)?;
                }
            }
            Op::RowSum(a) => {
                if self.needs(*a) {
                    let (rows, cols) = self.nodes[*a].value.shape();
                    let mut da = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let gv = g.get(r, 0);
                        for v in da.row_mut(r) {
                            *v = gv;
                        }
                    }
                    Self::accumulate(grads, *a, da)?;
                }
            }
            Op::EmbedRows { table, idx } => {
                if self.needs(*table) {
                    let t = &self.nodes[*table].value;
                    let mut dt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        let grow = g.row(r).to_vec();
                        for (v, gv) in dt.row_mut(i).iter_mut().zip(grow.iter()) {
                            *v += gv;
                        }
                    }
                    Self::accumulate(grads, *table, dt)?;
                }
            }
            Op::MeanCrossEntropy {
                logits,
                targets,
                n_classes,
            } => {
                if self.needs(*logits) {
                    let l = &self.nodes[*logits].value;
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut dl = Matrix::zeros(l.rows(), l.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &l.row(r)[..*n_classes];
                        let lse = func::log_sum_exp(row);
                        for (c, &logit) in row.iter().enumerate() {
                            let p = (logit - lse).exp();
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            dl.set(r, c, scale * (p - onehot));
                        }
                    }
                    Self::accumulate(grads, *logits, dl)?;
                }
            }
        }
        Ok(())
    }

    fn layer_norm_backward(
        &self,
        x_id: NodeId,
        gain_id: NodeId,
        bias_id: NodeId,
        eps: f64,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<()> {
        let x = &self.nodes[x_id].value;
        let gain = &self.nodes[gain_id].value;
        let (rows, cols) = x.shape();
        let c = cols as f64;

        let mut dgain = Matrix::zeros(1, cols);
        let mut dbias = Matrix::zeros(1, cols);
        let mut dx = Matrix::zeros(rows, cols);

        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + eps).sqrt();

            // xhat and the two row-level reductions the gradient needs
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            let mut dxhat = vec![0.0; cols];
            for j in 0..cols {
                let xh = (row[j] - mean) * inv;
                let gj = g.get(r, j);
                dgain.set(0, j, dgain.get(0, j) + gj * xh);
                dbias.set(0, j, dbias.get(0, j) + gj);
                let dh = gj * gain.get(0, j);
                dxhat[j] = dh;
                sum_dxhat += dh;
                sum_dxhat_xhat += dh * xh;
            }
            for j in 0..cols {
                let xh = (row[j] - mean) * inv;
                let v = (dxhat[j] - sum_dxhat / c - xh * sum_dxhat_xhat / c) * inv;
                dx.set(r, j, v);
            }
        }

        if self.needs(x_id) {
            Self::accumulate(grads, x_id, dx)?;
        }
        if self.needs(gain_id) {
            Self::accumulate(grads, gain_id, dgain)?;
        }
        if self.needs(bias_id) {
            Self::accumulate(grads, bias_id, dbias)?;
        }
        Ok(())
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over every checked coordinate.
    pub max_rel_err: f64,
    /// Total coordinates checked.
    pub n_coords: usize,
    /// Parameter name holding the worst coordinate.
    pub worst_param: String,
}

/// Central finite-difference step used by the trainer's self-checks.
/// Small enough that the O(step²) truncation term sits well under
/// `FD_REL_TOL` on loss-shaped graphs, large enough that f64 roundoff in
/// the loss difference stays orders of magnitude below the comparison
/// floor.
pub const FD_STEP: f64 = 1e-4;
/// Relative tolerance the analytic gradients are held to.
pub const FD_REL_TOL: f64 = 1e-4;

/// Check analytic gradients of an arbitrary taped computation against
/// central finite differences.
///
/// `build` receives a fresh tape plus the node ids of `params` (registered
/// in order) and must return the scalar loss node. Every coordinate of
/// every parameter is perturbed by `±step`; the relative error denominator
/// is floored at `1e-3` so near-zero gradients compare absolutely.
pub fn finite_diff_check<F>(
    params: &[(String, Matrix)],
    step: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|(name, value)| tape.param(name, value.clone()))
        .collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;

    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| t.constant(v.clone())).collect();
        let loss = build(&mut t, &ids)?;
        Ok(t.value(loss).get(0, 0))
    };

    let mut values: Vec<Matrix> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut max_rel_err: f64 = 0.0;
    let mut worst_param = String::new();
    let mut n_coords = 0;

    for (p, (name, _)) in params.iter().enumerate() {
        let analytic = grads
            .get(ids[p])
            .ok_or_else(|| Error::contract(format!("no gradient for parameter `{name}`")))?
            .clone();
        for i in 0..values[p].data().len() {
            let orig = values[p].data()[i];
            values[p].data_mut()[i] = orig + step;
            let plus = eval(&values)?;
            values[p].data_mut()[i] = orig - step;
            let minus = eval(&values)?;
            values[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = name.clone();
            }
            n_coords += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        n_coords,
        worst_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every primitive in one composed graph, checked against finite
    /// differences. This is the oracle for the backward rules. The graph
    /// divides by near-zero pooled values, so it runs at step 1e-5: at the
    /// default step the quotient's curvature dominates the comparison.
    /// Model-shaped graphs are held to `FD_STEP`/`FD_REL_TOL` in the
    /// model's own gradient tests.
    #[test]
    fn composed_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = vec![
            ("w1".to_string(), Matrix::gaussian(4, 6, 0.5, &mut rng)),
            ("w2".to_string(), Matrix::gaussian(6, 5, 0.5, &mut rng)),
            ("bias".to_string(), Matrix::gaussian(1, 6, 0.5, &mut rng)),
            ("gain".to_string(), Matrix::gaussian(1, 6, 0.2, &mut rng).map(|v| v + 1.0)),
            ("table".to_string(), Matrix::gaussian(3, 6, 0.5, &mut rng)),
        ];
        let x = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let mask = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0, 1.0],
        ])
        .unwrap();
        let targets = vec![0usize, 2, 1, 0, 2];

        let report = finite_diff_check(&params, 1e-5, |t, ids| {
            let (w1, w2, bias, gain, table) = (ids[0], ids[1], ids[2], ids[3], ids[4]);
            let x = t.constant(x.clone());
            let mask = t.constant(mask.clone());

            let h = t.matmul(x, w1)?; // 5x6
            let h = t.add_row(h, bias)?;
            let emb = t.embed_rows(table, &[0, 1, 2, 0, 1])?; // 5x6
            let h = t.add(h, emb)?;
            let h = t.layer_norm(h, gain, bias, 1e-5)?;
            let top = t.slice_rows(h, 0, 2)?;
            let bot = t.slice_rows(h, 2, 3)?;
            let gtop = t.gelu(top);
            let h = t.concat_rows(gtop, bot)?;
            let phi = t.elu_plus_one(h); // 5x6, positive
            let ht = t.transpose(phi); // 6x5
            let sym = t.matmul(phi, ht)?; // 5x5
            let masked = t.elem_mul(sym, mask)?;
            let sm = t.softmax_rows(masked);
            let den = t.row_sum(sym); // 5x1, positive
            let ratio = t.div_col_plus_eps(sm, den, 1e-6)?;
            let pooled = t.col_sum(ratio); // 1x5
            let pooled5 = t.scale(pooled, 3.0);
            let back = t.transpose(pooled5); // 5x1
            let spread = t.matmul(h, w2)?; // 5x5
            let mixed = t.div_col_plus_eps(spread, back, 1e-6)?;
            t.mean_cross_entropy(mixed, &targets, 3)
        })
        .unwrap();

        assert!(
            report.max_rel_err <= FD_REL_TOL,
            "max rel err {} in `{}` over {} coords",
            report.max_rel_err,
            report.worst_param,
            report.n_coords
        );
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut t = Tape::new();
        let p = t.param("p", Matrix::zeros(2, 2));
        let err = t.backward(p).unwrap_err();
        assert!(err.to_string().contains("1x1"));
    }

    #[test]
    fn gradient_accumulates_over_shared_subexpressions() {
        // loss = mean_ce(x*w + x*w) so dL/dw gets two contributions.
        let mut t = Tape::new();
        let w = t.param("w", Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]).unwrap());
        let x = t.constant(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let a = t.matmul(x, w).unwrap();
        let b = t.matmul(x, w).unwrap();
        let s = t.add(a, b).unwrap();
        let loss = t.mean_cross_entropy(s, &[1], 2).unwrap();
        let grads = t.backward(loss).unwrap();

        let single = {
            let mut t2 = Tape::new();
            let w2 = t2.param("w", Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]).unwrap());
            let x2 = t2.constant(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
            let a2 = t2.matmul(x2, w2).unwrap();
            let s2 = t2.scale(a2, 2.0);
            let loss2 = t2.mean_cross_entropy(s2, &[1], 2).unwrap();
            let g2 = t2.backward(loss2).unwrap();
            g2.by_name(&t2, "w").unwrap().clone()
        };
        assert!(grads.by_name(&t, "w").unwrap().max_abs_diff(&single) < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_logit_columns_past_n_classes() {
        let mut t = Tape::new();
        let l = t.param(
            "l",
            Matrix::from_rows(&[vec![0.2, -0.4, 99.0], vec![1.0, 0.5, -99.0]]).unwrap(),
        );
        let loss = t.mean_cross_entropy(l, &[0, 1], 2).unwrap();
        let grads = t.backward(loss).unwrap();
        let gl = grads.by_name(&t, "l").unwrap();
        assert_eq!(gl.get(0, 2), 0.0);
        assert_eq!(gl.get(1, 2), 0.0);

        // Loss value itself only reads the first two columns.
        let expected = {
            let r0 = crate::num::func::log_sum_exp(&[0.2, -0.4]) - 0.2;
            let r1 = crate::num::func::log_sum_exp(&[1.0, 0.5]) - 0.5;
            (r0 + r1) / 2.0
        };
        assert!((t.value(loss).get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_only_graphs_produce_no_parameter_gradients() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(1, 2, 0.5));
        let loss = t.mean_cross_entropy(c, &[0], 2).unwrap();
        let grads = t.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
    }
}
