//! The two-segment tabular transformer.
//!
//! A prompt is one table: `n_train` labeled rows followed by `n_test`
//! unlabeled rows, one token per row. Train tokens are the feature
//! projection plus a label embedding; test tokens are the feature
//! projection alone. Every layer attends from all rows to the train rows
//! only, so test rows never see each other and predictions are row-wise
//! independent. Logits are read at the test positions through a small MLP
//! head.
//!
//! Two forward paths compute the same function:
//!
//! - [`forward_infer`] uses the instrumented attention kernels and returns
//!   the summed attention cost alongside the logits;
//! - [`forward_train`] records the computation on a [`Tape`] for
//!   backpropagation.
//!
//! Their outputs agree to floating-point reshuffling (tested to 1e-10).

pub mod checkpoint;

use crate::attention::{pfn_linear_attention, pfn_softmax_attention, AttentionCost, NORM_EPS};
use crate::error::{Error, Result};
use crate::num::{self, Matrix, NodeId, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which attention form the model's layers use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelAttention {
    /// Normalized linear attention (the default; linear in prompt length).
    Linear,
    /// Quadratic softmax attention (reference).
    Softmax,
}

/// Architecture hyperparameters. Serialized verbatim into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Token width.
    pub d_model: usize,
    /// Residual blocks.
    pub n_layers: usize,
    /// Attention heads per block; must divide `d_model`.
    pub n_heads: usize,
    /// MLP hidden width as a multiple of `d_model`.
    pub hidden_mult: usize,
    /// Feature columns every prompt is padded to.
    pub feature_capacity: usize,
    /// Upper bound on classes; the label embedding table height and the
    /// logit width.
    pub class_capacity: usize,
    /// Longest prompt (train + test rows) the model accepts.
    pub max_prompt: usize,
    /// Attention form.
    pub attention: ModelAttention,
    /// Mask the train segment causally (train row `i` sees rows `j <= i`;
    /// test rows still see every train row). The ordered-context ablation.
    pub causal_ablation: bool,
    /// Layer-norm variance guard.
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Small desk-scale model: 64-wide, 3 blocks, 4 heads, 100 feature /
    /// 10 class capacity.
    pub fn toy_s() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 3,
            n_heads: 4,
            hidden_mult: 2,
            feature_capacity: 100,
            class_capacity: 10,
            max_prompt: 16384,
            attention: ModelAttention::Linear,
            causal_ablation: false,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.hidden_mult == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::contract(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.feature_capacity == 0 {
            return Err(Error::contract("feature_capacity must be positive"));
        }
        if self.class_capacity < 2 {
            return Err(Error::contract("class_capacity must be at least 2"));
        }
        if self.max_prompt < 2 {
            return Err(Error::contract("max_prompt must allow train and test rows"));
        }
        if !(self.ln_eps.is_finite() && self.ln_eps > 0.0) {
            return Err(Error::contract("ln_eps must be positive and finite"));
        }
        Ok(())
    }

    fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn d_hidden(&self) -> usize {
        self.d_model * self.hidden_mult
    }

    /// The full tensor layout this architecture expects: stable names and
    /// shapes, in serialization order.
    pub fn tensor_layout(&self) -> Vec<(String, (usize, usize))> {
        let d = self.d_model;
        let dh = self.d_head();
        let hid = self.d_hidden();
        let mut out = vec![
            ("embed.features".to_string(), (self.feature_capacity, d)),
            ("embed.labels".to_string(), (self.class_capacity, d)),
        ];
        for l in 0..self.n_layers {
            out.push((format!("layer{l}.ln1.gain"), (1, d)));
            out.push((format!("layer{l}.ln1.bias"), (1, d)));
            for h in 0..self.n_heads {
                for w in ["wq", "wk", "wv"] {
                    out.push((format!("layer{l}.head{h}.{w}"), (d, dh)));
                    out.push((format!("layer{l}.head{h}.b{}", &w[1..]), (1, dh)));
                }
                out.push((format!("layer{l}.head{h}.wo"), (dh, d)));
            }
            out.push((format!("layer{l}.attn.bo"), (1, d)));
            out.push((format!("layer{l}.ln2.gain"), (1, d)));
            out.push((format!("layer{l}.ln2.bias"), (1, d)));
            out.push((format!("layer{l}.mlp.w1"), (d, hid)));
            out.push((format!("layer{l}.mlp.b1"), (1, hid)));
            out.push((format!("layer{l}.mlp.w2"), (hid, d)));
            out.push((format!("layer{l}.mlp.b2"), (1, d)));
        }
        out.push(("head.ln.gain".to_string(), (1, d)));
        out.push(("head.ln.bias".to_string(), (1, d)));
        out.push(("head.w1".to_string(), (d, hid)));
        out.push(("head.b1".to_string(), (1, hid)));
        out.push(("head.w2".to_string(), (hid, self.class_capacity)));
        out.push(("head.b2".to_string(), (1, self.class_capacity)));
        out
    }
}

/// Named parameter tensors in the architecture's serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Matrix)>,
}

impl ModelParams {
    pub fn from_entries(entries: Vec<(String, Matrix)>) -> Self {
        ModelParams { entries }
    }

    pub fn entries(&self) -> &[(String, Matrix)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Matrix)] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, m)| m.rows() * m.cols())
            .sum()
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    /// Check names and shapes against a config's expected layout.
    pub fn validate_layout(&self, config: &ModelConfig) -> Result<()> {
        let expected = config.tensor_layout();
        if expected.len() != self.entries.len() {
            return Err(Error::contract(format!(
                "parameter count {} does not match architecture ({} expected)",
                self.entries.len(),
                expected.len()
            )));
        }
        for ((name, shape), (ename, eshape)) in self
            .entries
            .iter()
            .map(|(n, m)| (n, m.shape()))
            .zip(expected.iter())
        {
            if name != ename || shape != *eshape {
                return Err(Error::contract(format!(
                    "parameter `{name}` {shape:?} does not match expected `{ename}` {eshape:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Initialize parameters: projection weights `N(0, 1/fan_in)`, label
/// embeddings `N(0, 1)` (they must stay visible against feature tokens
/// that the capacity-padding scale can make large), layer-norm gains 1,
/// all biases 0. Every tensor is rounded through `f32` so checkpoints
/// round-trip losslessly.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (name, (rows, cols)) in config.tensor_layout() {
        let leaf = name.rsplit('.').next().unwrap_or("");
        let mut m = if leaf == "gain" {
            Matrix::filled(rows, cols, 1.0)
        } else if leaf.starts_with('b') && leaf != "bias" || leaf == "bias" {
            Matrix::zeros(rows, cols)
        } else if name == "embed.labels" {
            Matrix::gaussian(rows, cols, 1.0, &mut rng)
        } else {
            // Weight matrices map rows -> cols, so fan_in is the row count.
            Matrix::gaussian(rows, cols, 1.0 / (rows as f64).sqrt(), &mut rng)
        };
        m.round_to_f32();
        entries.push((name, m));
    }
    Ok(ModelParams { entries })
}

/// One prompt, already numeric: `x` is the padded feature matrix for all
/// rows (train first), `train_labels` the class of each train row.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub x: Matrix,
    pub train_labels: Vec<usize>,
}

impl ModelInput {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn n_test(&self) -> usize {
        self.x.rows() - self.train_labels.len()
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n = self.n_train();
        let total = self.x.rows();
        if n == 0 {
            return Err(Error::contract("prompt needs at least one train row"));
        }
        if total <= n {
            return Err(Error::contract("prompt needs at least one test row"));
        }
        if total > config.max_prompt {
            return Err(Error::Capacity {
                what: "prompt rows",
                got: total,
                cap: config.max_prompt,
            });
        }
        if self.x.cols() != config.feature_capacity {
            return Err(Error::Capacity {
                what: "feature columns",
                got: self.x.cols(),
                cap: config.feature_capacity,
            });
        }
        if let Some(&bad) = self.train_labels.iter().find(|&&l| l >= config.class_capacity) {
            return Err(Error::Capacity {
                what: "train label",
                got: bad,
                cap: config.class_capacity,
            });
        }
        if !self.x.is_finite() {
            return Err(Error::NonFinite {
                what: "prompt features".to_string(),
            });
        }
        Ok(())
    }
}

/// Logits for the test rows plus the summed cost of every attention call.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `n_test x class_capacity`.
    pub logits: Matrix,
    pub attention_cost: AttentionCost,
}

/// Inference forward pass over the instrumented kernels.
pub fn forward_infer(
    config: &ModelConfig,
    params: &ModelParams,
    input: &ModelInput,
) -> Result<ForwardOutput> {
    config.validate()?;
    params.validate_layout(config)?;
    input.validate(config)?;

    let n = input.n_train();
    let m = input.n_test();
    let mut cost = AttentionCost::default();

    // Tokens: feature projection for all rows, plus label embeddings on
    // the train segment.
    let mut tokens = input.x.matmul(params.get("embed.features")?)?;
    let labels = params.get("embed.labels")?;
    for (i, &l) in input.train_labels.iter().enumerate() {
        let lrow = labels.row(l).to_vec();
        for (t, e) in tokens.row_mut(i).iter_mut().zip(lrow.iter()) {
            *t += e;
        }
    }

    for l in 0..config.n_layers {
        let h = num::layer_norm_rows(
            &tokens,
            params.get(&format!("layer{l}.ln1.gain"))?,
            params.get(&format!("layer{l}.ln1.bias"))?,
            config.ln_eps,
        )?;
        let mut attn = Matrix::zeros(n + m, config.d_model);
        for hd in 0..config.n_heads {
            let base = format!("layer{l}.head{hd}");
            let q = h
                .matmul(params.get(&format!("{base}.wq"))?)?
                .add_row_vec(params.get(&format!("{base}.bq"))?)?;
            let k = h
                .matmul(params.get(&format!("{base}.wk"))?)?
                .add_row_vec(params.get(&format!("{base}.bk"))?)?;
            let v = h
                .matmul(params.get(&format!("{base}.wv"))?)?
                .add_row_vec(params.get(&format!("{base}.bv"))?)?;
            let res = match config.attention {
                ModelAttention::Linear => {
                    pfn_linear_attention(&q, &k, &v, n, config.causal_ablation, true)?
                }
                ModelAttention::Softmax => {
                    pfn_softmax_attention(&q, &k, &v, n, config.causal_ablation)?
                }
            };
            cost = cost.add(&res.cost);
            let projected = res.out.matmul(params.get(&format!("{base}.wo"))?)?;
            attn.add_assign(&projected)?;
        }
        let attn = attn.add_row_vec(params.get(&format!("layer{l}.attn.bo"))?)?;
        tokens.add_assign(&attn)?;

        let h2 = num::layer_norm_rows(
            &tokens,
            params.get(&format!("layer{l}.ln2.gain"))?,
            params.get(&format!("layer{l}.ln2.bias"))?,
            config.ln_eps,
        )?;
        let hidden = h2
            .matmul(params.get(&format!("layer{l}.mlp.w1"))?)?
            .add_row_vec(params.get(&format!("layer{l}.mlp.b1"))?)?;
        let hidden = num::gelu_mat(&hidden);
        let mlp = hidden
            .matmul(params.get(&format!("layer{l}.mlp.w2"))?)?
            .add_row_vec(params.get(&format!("layer{l}.mlp.b2"))?)?;
        tokens.add_assign(&mlp)?;
    }

    let test = tokens.slice_rows(n, m)?;
    let normed = num::layer_norm_rows(
        &test,
        params.get("head.ln.gain")?,
        params.get("head.ln.bias")?,
        config.ln_eps,
    )?;
    let hidden = normed
        .matmul(params.get("head.w1")?)?
        .add_row_vec(params.get("head.b1")?)?;
    let hidden = num::gelu_mat(&hidden);
    let logits = hidden
        .matmul(params.get("head.w2")?)?
        .add_row_vec(params.get("head.b2")?)?;

    Ok(ForwardOutput {
        logits,
        attention_cost: cost,
    })
}

/// Class probabilities for the test rows: softmax over the first
/// `n_classes` logits.
pub fn predict_proba(
    config: &ModelConfig,
    params: &ModelParams,
    input: &ModelInput,
    n_classes: usize,
) -> Result<Matrix> {
    if n_classes < 2 || n_classes > config.class_capacity {
        return Err(Error::Capacity {
            what: "n_classes",
            got: n_classes,
            cap: config.class_capacity,
        });
    }
    let out = forward_infer(config, params, input)?;
    let mut trimmed = Matrix::zeros(out.logits.rows(), n_classes);
    for r in 0..trimmed.rows() {
        trimmed
            .row_mut(r)
            .copy_from_slice(&out.logits.row(r)[..n_classes]);
    }
    Ok(num::softmax_rows(&trimmed))
}

/// Parameter node ids for a model registered on a tape.
pub struct TapedParams {
    ids: Vec<(String, NodeId)>,
}

impl TapedParams {
    /// Register every parameter as a named tape leaf.
    pub fn register(tape: &mut Tape, params: &ModelParams) -> TapedParams {
        let ids = params
            .entries()
            .iter()
            .map(|(name, m)| (name.clone(), tape.param(name, m.clone())))
            .collect();
        TapedParams { ids }
    }

    /// Assemble from leaves registered elsewhere — e.g. inside a
    /// [`finite_diff_check`](crate::num::finite_diff_check) build closure,
    /// where the checker owns registration and hands back raw node ids.
    pub fn from_named(ids: Vec<(String, NodeId)>) -> TapedParams {
        TapedParams { ids }
    }

    fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    /// The registered leaves, in parameter order.
    pub fn named_ids(&self) -> &[(String, NodeId)] {
        &self.ids
    }
}

/// Training forward pass, recorded on `tape`. Returns the logits node
/// (`n_test x class_capacity`).
///
/// Computes the same function as [`forward_infer`]: linear attention via
/// the state form, or — under the causal ablation — via an equivalent
/// masked quadratic form, which is differentiable with the same primitive
/// set at desk-scale prompt lengths.
pub fn forward_train(
    tape: &mut Tape,
    config: &ModelConfig,
    taped: &TapedParams,
    input: &ModelInput,
) -> Result<NodeId> {
    input.validate(config)?;
    let n = input.n_train();
    let m = input.n_test();

    let x = tape.constant(input.x.clone());
    let feat = tape.matmul(x, taped.get("embed.features")?)?;
    let lab = tape.embed_rows(taped.get("embed.labels")?, &input.train_labels)?;
    let zeros = tape.constant(Matrix::zeros(m, config.d_model));
    let lab_all = tape.concat_rows(lab, zeros)?;
    let mut tokens = tape.add(feat, lab_all)?;

    for l in 0..config.n_layers {
        let h = tape.layer_norm(
            tokens,
            taped.get(&format!("layer{l}.ln1.gain"))?,
            taped.get(&format!("layer{l}.ln1.bias"))?,
            config.ln_eps,
        )?;
        let mut attn_sum: Option<NodeId> = None;
        for hd in 0..config.n_heads {
            let base = format!("layer{l}.head{hd}");
            let q = tape.matmul(h, taped.get(&format!("{base}.wq"))?)?;
            let q = tape.add_row(q, taped.get(&format!("{base}.bq"))?)?;
            let k_full = tape.matmul(h, taped.get(&format!("{base}.wk"))?)?;
            let k_full = tape.add_row(k_full, taped.get(&format!("{base}.bk"))?)?;
            let v_full = tape.matmul(h, taped.get(&format!("{base}.wv"))?)?;
            let v_full = tape.add_row(v_full, taped.get(&format!("{base}.bv"))?)?;
            let k = tape.slice_rows(k_full, 0, n)?;
            let v = tape.slice_rows(v_full, 0, n)?;

            let o_h = match config.attention {
                ModelAttention::Linear => {
                    let phi_q = tape.elu_plus_one(q);
                    let phi_k = tape.elu_plus_one(k);
                    if config.causal_ablation {
                        // Masked quadratic form of the same function.
                        let phi_k_t = tape.transpose(phi_k);
                        let scores = tape.matmul(phi_q, phi_k_t)?;
                        let mask = tape.constant(train_causal_mask(n, m));
                        let masked = tape.elem_mul(scores, mask)?;
                        let den = tape.row_sum(masked);
                        let numer = tape.matmul(masked, v)?;
                        tape.div_col_plus_eps(numer, den, NORM_EPS)?
                    } else {
                        let phi_k_t = tape.transpose(phi_k);
                        let s = tape.matmul(phi_k_t, v)?;
                        let numer = tape.matmul(phi_q, s)?;
                        let z = tape.col_sum(phi_k);
                        let z_t = tape.transpose(z);
                        let den = tape.matmul(phi_q, z_t)?;
                        tape.div_col_plus_eps(numer, den, NORM_EPS)?
                    }
                }
                ModelAttention::Softmax => {
                    let k_t = tape.transpose(k);
                    let scores = tape.matmul(q, k_t)?;
                    let scaled = tape.scale(scores, 1.0 / (config.d_head() as f64).sqrt());
                    let scored = if config.causal_ablation {
                        let mask = tape.constant(train_causal_additive_mask(n, m));
                        tape.add(scaled, mask)?
                    } else {
                        scaled
                    };
                    let probs = tape.softmax_rows(scored);
                    tape.matmul(probs, v)?
                }
            };
            let projected = tape.matmul(o_h, taped.get(&format!("{base}.wo"))?)?;
            attn_sum = Some(match attn_sum {
                None => projected,
                Some(acc) => tape.add(acc, projected)?,
            });
        }
        let attn = attn_sum.expect("n_heads >= 1");
        let attn = tape.add_row(attn, taped.get(&format!("layer{l}.attn.bo"))?)?;
        tokens = tape.add(tokens, attn)?;

        let h2 = tape.layer_norm(
            tokens,
            taped.get(&format!("layer{l}.ln2.gain"))?,
            taped.get(&format!("layer{l}.ln2.bias"))?,
            config.ln_eps,
        )?;
        let hidden = tape.matmul(h2, taped.get(&format!("layer{l}.mlp.w1"))?)?;
        let hidden = tape.add_row(hidden, taped.get(&format!("layer{l}.mlp.b1"))?)?;
        let hidden = tape.gelu(hidden);
        let mlp = tape.matmul(hidden, taped.get(&format!("layer{l}.mlp.w2"))?)?;
        let mlp = tape.add_row(mlp, taped.get(&format!("layer{l}.mlp.b2"))?)?;
        tokens = tape.add(tokens, mlp)?;
    }

    let test = tape.slice_rows(tokens, n, m)?;
    let normed = tape.layer_norm(
        test,
        taped.get("head.ln.gain")?,
        taped.get("head.ln.bias")?,
        config.ln_eps,
    )?;
    let hidden = tape.matmul(normed, taped.get("head.w1")?)?;
    let hidden = tape.add_row(hidden, taped.get("head.b1")?)?;
    let hidden = tape.gelu(hidden);
    let logits = tape.matmul(hidden, taped.get("head.w2")?)?;
    tape.add_row(logits, taped.get("head.b2")?)
}

/// Multiplicative visibility mask for the causal ablation: train row `i`
/// sees train rows `j <= i`; test rows see the whole train segment.
fn train_causal_mask(n_train: usize, n_test: usize) -> Matrix {
    let mut m = Matrix::zeros(n_train + n_test, n_train);
    for i in 0..n_train + n_test {
        for j in 0..n_train {
            if i >= n_train || j <= i {
                m.set(i, j, 1.0);
            }
        }
    }
    m
}

/// Additive variant for softmax scores: 0 where visible, a large negative
/// number where masked.
fn train_causal_additive_mask(n_train: usize, n_test: usize) -> Matrix {
    let mut m = Matrix::zeros(n_train + n_test, n_train);
    for i in 0..n_train {
        for j in i + 1..n_train {
            m.set(i, j, -1e30);
        }
    }
    m
}
