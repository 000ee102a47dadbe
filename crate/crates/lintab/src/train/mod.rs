//! Pretraining on the synthetic prior.
//!
//! Every optimizer step samples a fresh batch of tasks — the model never
//! sees the same table twice — runs the taped forward pass, takes mean
//! cross-entropy at the test positions, and applies Adam with linear
//! warmup and global-norm gradient clipping.
//!
//! Reproducibility is strict: task seeds depend only on `(seed, step,
//! slot)`, gradients are reduced in slot order regardless of thread
//! count, and weights and Adam moments are kept exactly representable in
//! `f32` after every update, so a run checkpointed at step `k` and
//! resumed reaches step `k + j` with weights bit-identical to an
//! uninterrupted run.

use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, LossPoint, OptimizerState, TrainProvenance};
use crate::model::{forward_train, init_params, ModelConfig, TapedParams};
use crate::num::{log_sum_exp, Matrix, Tape};
use crate::pipeline::prompt_from_task;
use crate::prior::{sample_task, PriorFamily, PriorSpec};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub prior: PriorSpec,
    /// Tasks per optimizer step.
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of total steps spent ramping the rate up linearly.
    pub warmup_fraction: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Worker threads for the batch; any count gives identical results.
    pub threads: usize,
}

impl TrainConfig {
    /// Desk-scale defaults: 8 tasks per step, 1000 steps.
    pub fn desk(model: ModelConfig, prior: PriorSpec) -> Self {
        TrainConfig {
            model,
            prior,
            batch_size: 8,
            steps_per_epoch: 250,
            epochs: 4,
            learning_rate: 3e-5,
            warmup_fraction: 0.05,
            grad_clip_norm: 1.0,
            seed: 0,
            threads: 1,
        }
    }

    pub fn total_steps(&self) -> u64 {
        (self.steps_per_epoch * self.epochs) as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.prior.validate()?;
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if self.total_steps() == 0 {
            return Err(Error::contract("training needs at least one step"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::contract("learning_rate must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::contract("warmup_fraction must lie in [0, 1]"));
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return Err(Error::contract("grad_clip_norm must be positive"));
        }
        if self.threads == 0 {
            return Err(Error::contract("threads must be at least 1"));
        }
        if self.prior.prompt_len > self.model.max_prompt {
            return Err(Error::Capacity {
                what: "prompt rows",
                got: self.prior.prompt_len,
                cap: self.model.max_prompt,
            });
        }
        if self.prior.max_features > self.model.feature_capacity {
            return Err(Error::Capacity {
                what: "feature columns",
                got: self.prior.max_features,
                cap: self.model.feature_capacity,
            });
        }
        if self.prior.max_classes > self.model.class_capacity {
            return Err(Error::Capacity {
                what: "classes",
                got: self.prior.max_classes,
                cap: self.model.class_capacity,
            });
        }
        Ok(())
    }

    fn prior_name(&self) -> String {
        match self.prior.family {
            PriorFamily::Mlp => "mlp".to_string(),
            PriorFamily::Blobs { .. } => "blobs".to_string(),
        }
    }
}

/// Mean cross-entropy at the test positions, reading only the first
/// `n_classes` logit columns.
pub fn loss(logits: &Matrix, labels: &[usize], n_classes: usize) -> Result<f64> {
    if logits.rows() == 0 {
        return Err(Error::contract("loss needs at least one test row"));
    }
    if labels.len() != logits.rows() {
        return Err(Error::contract(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if n_classes == 0 || n_classes > logits.cols() {
        return Err(Error::contract(format!(
            "n_classes {n_classes} outside 1..={}",
            logits.cols()
        )));
    }
    let mut total = 0.0;
    for (r, &t) in labels.iter().enumerate() {
        if t >= n_classes {
            return Err(Error::contract(format!(
                "label {t} outside {n_classes} classes"
            )));
        }
        let row = &logits.row(r)[..n_classes];
        total += log_sum_exp(row) - row[t];
    }
    Ok(total / labels.len() as f64)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// The seed of the task filling `slot` of the batch at `step`. Depends
/// on nothing else, so resumed runs resample identical tasks.
pub fn task_seed(seed: u64, step: u64, slot: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ step) ^ slot)
}

fn lr_at(config: &TrainConfig, step: u64) -> f64 {
    let warmup = (config.total_steps() as f64 * config.warmup_fraction).ceil() as u64;
    if warmup > 0 && step <= warmup {
        config.learning_rate * step as f64 / warmup as f64
    } else {
        config.learning_rate
    }
}

/// A finished (or checkpoint-resumed) training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    /// The full loss curve, one point per completed step (also stored in
    /// the checkpoint's provenance).
    pub curve: Vec<LossPoint>,
}

/// Train from fresh seeded initialization.
pub fn train(config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    let params = init_params(&config.model, config.seed)?;
    let optimizer = OptimizerState::zeros(&params);
    run_steps(config, params, optimizer, Vec::new())
}

/// Continue a checkpointed run up to `config.total_steps()`. The
/// checkpoint must carry optimizer state and match the config's
/// architecture; with the same seed the result is bit-identical to never
/// having stopped.
pub fn resume(checkpoint: Checkpoint, config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    if checkpoint.config != config.model {
        return Err(Error::contract(
            "checkpoint architecture differs from the training config",
        ));
    }
    let Some(optimizer) = checkpoint.optimizer else {
        return Err(Error::contract(
            "checkpoint lacks optimizer state; it cannot resume training",
        ));
    };
    let done = checkpoint.provenance.steps_completed;
    if done > config.total_steps() {
        return Err(Error::contract(format!(
            "checkpoint already ran {done} steps, config stops at {}",
            config.total_steps()
        )));
    }
    run_steps(
        config,
        checkpoint.params,
        optimizer,
        checkpoint.provenance.loss_curve,
    )
}

fn run_steps(
    config: &TrainConfig,
    mut params: crate::model::ModelParams,
    mut opt: OptimizerState,
    mut curve: Vec<LossPoint>,
) -> Result<TrainRun> {
    let total = config.total_steps();
    let n_params = params.len();

    for step in opt.step + 1..=total {
        let lr_t = lr_at(config, step);

        // Every slot's task, loss, and gradients — computed possibly in
        // parallel, reduced strictly in slot order.
        let per_slot = batch_gradients(config, &params, step)?;

        let mut grads: Vec<Matrix> = params
            .entries()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let mut loss_sum = 0.0;
        for (task_loss, task_grads) in &per_slot {
            loss_sum += task_loss;
            for (acc, g) in grads.iter_mut().zip(task_grads.iter()) {
                acc.add_assign(g)?;
            }
        }
        let batch = config.batch_size as f64;
        let step_loss = loss_sum / batch;
        if !step_loss.is_finite() {
            let seeds: Vec<u64> = (0..config.batch_size)
                .map(|s| task_seed(config.seed, step, s as u64))
                .collect();
            return Err(Error::NonFinite {
                what: format!("training loss at step {step} (task seeds {seeds:?})"),
            });
        }
        for g in grads.iter_mut() {
            *g = g.scale(1.0 / batch);
        }

        // Global-norm clip.
        let norm = grads
            .iter()
            .map(|g| {
                let f = g.frobenius_norm();
                f * f
            })
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient norm at step {step}"),
            });
        }
        let clipped_norm = if norm > config.grad_clip_norm {
            let s = config.grad_clip_norm / norm;
            for g in grads.iter_mut() {
                *g = g.scale(s);
            }
            config.grad_clip_norm
        } else {
            norm
        };

        // Adam, with every stored value rounded through f32 so the
        // checkpoint format is lossless.
        let t = step;
        let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for (p, g) in grads.iter().enumerate().take(n_params) {
            let m = &mut opt.m[p].1;
            for (mv, gv) in m.data_mut().iter_mut().zip(g.data().iter()) {
                *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            }
            m.round_to_f32();
            let v = &mut opt.v[p].1;
            for (vv, gv) in v.data_mut().iter_mut().zip(g.data().iter()) {
                *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            }
            v.round_to_f32();

            let theta = &mut params.entries_mut()[p].1;
            let m = &opt.m[p].1;
            let v = &opt.v[p].1;
            for ((tv, mv), vv) in theta
                .data_mut()
                .iter_mut()
                .zip(m.data().iter())
                .zip(v.data().iter())
            {
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                *tv -= lr_t * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            theta.round_to_f32();
        }
        opt.step = t;

        curve.push(LossPoint {
            step,
            loss: step_loss,
            grad_norm: clipped_norm,
            lr: lr_t,
        });
    }

    let checkpoint = Checkpoint {
        config: config.model.clone(),
        params,
        provenance: TrainProvenance {
            seed: config.seed,
            steps_completed: total,
            prior: config.prior_name(),
            loss_curve: curve.clone(),
        },
        optimizer: Some(opt),
    };
    Ok(TrainRun { checkpoint, curve })
}

/// Loss and per-parameter gradients for one task.
fn task_gradients(
    config: &TrainConfig,
    params: &crate::model::ModelParams,
    seed: u64,
) -> Result<(f64, Vec<Matrix>)> {
    let task = sample_task(&config.prior, seed)?;
    let (input, _) = prompt_from_task(&task, &config.model, None)?;
    let (labels, n_classes) = task.class_labels()?;
    let test_labels = &labels[task.n_train..];

    let mut tape = Tape::new();
    let taped = TapedParams::register(&mut tape, params);
    let logits = forward_train(&mut tape, &config.model, &taped, &input)?;
    let loss_node = tape.mean_cross_entropy(logits, test_labels, n_classes)?;
    let loss_val = tape.value(loss_node).get(0, 0);
    let grads = tape.backward(loss_node)?;

    let ordered = taped
        .named_ids()
        .iter()
        .zip(params.entries().iter())
        .map(|((_, id), (_, m))| {
            grads
                .get(*id)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
        })
        .collect();
    Ok((loss_val, ordered))
}

/// One slot's result: the task loss and the parameter-ordered gradients.
type TaskGradients = Result<(f64, Vec<Matrix>)>;

/// All slots of one step, in slot order.
fn batch_gradients(
    config: &TrainConfig,
    params: &crate::model::ModelParams,
    step: u64,
) -> Result<Vec<(f64, Vec<Matrix>)>> {
    let seeds: Vec<u64> = (0..config.batch_size)
        .map(|s| task_seed(config.seed, step, s as u64))
        .collect();

    if config.threads <= 1 || config.batch_size == 1 {
        return seeds
            .iter()
            .map(|&s| task_gradients(config, params, s))
            .collect();
    }

    let workers = config.threads.min(config.batch_size);
    let mut slots: Vec<Option<TaskGradients>> = (0..config.batch_size).map(|_| None).collect();
    let results: Vec<(usize, TaskGradients)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let seeds = &seeds;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut slot = w;
                    while slot < seeds.len() {
                        out.push((slot, task_gradients(config, params, seeds[slot])));
                        slot += workers;
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    for (slot, res) in results {
        slots[slot] = Some(res);
    }
    slots
        .into_iter()
        .map(|r| r.expect("every slot is computed exactly once"))
        .collect()
}

/// Write the loss curve as `step,loss,grad_norm,lr` CSV.
pub fn write_loss_csv(curve: &[LossPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "step,loss,grad_norm,lr")?;
    for p in curve {
        writeln!(f, "{},{},{},{}", p.step, p.loss, p.grad_norm, p.lr)?;
    }
    Ok(())
}
