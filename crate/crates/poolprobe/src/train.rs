//! Optimization loop: Adam, plateau learning-rate decay, early stopping.
//!
//! One run owns a model and a dataset split. Every epoch shuffles the
//! training indices from an epoch-specific seed, accumulates averaged
//! gradients over minibatches, and steps Adam. Validation loss drives two
//! independent counters: one halves the learning rate after `lr_patience`
//! stale epochs, the other stops the run after `early_stop_patience`. The
//! best-validation weights are restored before the single test evaluation.
//!
//! Memory-addressed models with trainable keys alternate: every
//! `gmn_key_period`-th epoch trains only the keys against the purity loss,
//! all other epochs train everything but the keys against the supervised
//! objective. Parameters excluded by the mask are untouched down to the
//! bit: no state decay, no step-count advance.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::clustering::rng_from;
use crate::error::{Error, Result};
use crate::graph::{Graph, Label};
use crate::losses::{entropy_loss, kl_purity_loss, link_prediction_loss, supervised_loss};
use crate::mat::Mat;
use crate::models::{GmnVariant, Model, PoolFamily};

/// Which trainable parameters an optimizer step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMask {
    All,
    /// Only key matrices and head mixing weights.
    KeysOnly,
    /// Everything except key matrices and head mixing weights.
    ExceptKeys,
}

impl UpdateMask {
    fn include(&self, name: &str) -> bool {
        match self {
            UpdateMask::All => true,
            UpdateMask::KeysOnly => Model::is_key_param(name),
            UpdateMask::ExceptKeys => !Model::is_key_param(name),
        }
    }
}

struct AdamSlot {
    m: Mat,
    v: Mat,
    /// Per-parameter step count; advances only when the mask includes the
    /// parameter, so bias correction stays correct under alternation.
    t: u64,
}

/// Adam over a fixed set of named parameter handles.
pub struct Adam {
    params: Vec<(String, Tensor)>,
    slots: Vec<AdamSlot>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>) -> Adam {
        let slots = params
            .iter()
            .map(|(_, p)| AdamSlot {
                m: Mat::zeros(p.rows(), p.cols()),
                v: Mat::zeros(p.rows(), p.cols()),
                t: 0,
            })
            .collect();
        Adam {
            params,
            slots,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Apply one update from the gradients currently stored on the
    /// parameters. Gradients are not cleared here.
    pub fn step(&mut self, lr: f64, mask: UpdateMask) {
        for ((name, p), slot) in self.params.iter().zip(&mut self.slots) {
            if !mask.include(name) {
                continue;
            }
            let g = p.grad_or_zeros();
            slot.t += 1;
            let b1t = 1.0 - self.beta1.powi(slot.t as i32);
            let b2t = 1.0 - self.beta2.powi(slot.t as i32);
            let mut w = p.value();
            for i in 0..g.len() {
                let gi = g.data()[i];
                let m = self.beta1 * slot.m.data()[i] + (1.0 - self.beta1) * gi;
                let v = self.beta2 * slot.v.data()[i] + (1.0 - self.beta2) * gi * gi;
                slot.m.data_mut()[i] = m;
                slot.v.data_mut()[i] = v;
                let mhat = m / b1t;
                let vhat = v / b2t;
                w.data_mut()[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.set_value(w);
        }
    }
}

/// Deterministic 80/10/10 split of `0..n` (train gets `floor(0.8 n)`,
/// validation `floor(0.1 n)`, test the remainder).
pub fn split_dataset(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(&[seed, 0x5911]));
    let n_train = (0.8 * n as f64).floor() as usize;
    let n_val = (0.1 * n as f64).floor() as usize;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    (train, val, test)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    /// Validation loss must drop by more than this to count as progress.
    pub improvement_tol: f64,
    /// Weight on the link-prediction auxiliary (soft-assignment families).
    pub link_weight: f64,
    /// Weight on the assignment-entropy auxiliary.
    pub entropy_weight: f64,
    /// Every p-th epoch trains keys only, against the purity loss;
    /// 0 disables the alternation.
    pub gmn_key_period: usize,
    /// If positive, adds the purity loss into the supervised objective
    /// instead of relying on alternation alone.
    pub gmn_kl_weight: f64,
    /// Seed for splits and epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            min_lr: 1e-5,
            lr_decay_factor: 0.5,
            lr_patience: 10,
            early_stop_patience: 50,
            improvement_tol: 1e-6,
            link_weight: 0.0,
            entropy_weight: 0.0,
            gmn_key_period: 5,
            gmn_kl_weight: 0.0,
            seed: 0,
        }
    }
}

/// What one epoch optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Supervised,
    Keys,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    /// 1-indexed.
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_loss: f64,
    pub test_metric: f64,
    /// "accuracy" or "mae", depending on the dataset labels.
    pub metric_name: &'static str,
}

fn argmax_row(m: &Mat) -> usize {
    let row = m.row(0);
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Mean supervised loss and task metric over `indices`.
///
/// The metric is accuracy for classification, mean absolute error for
/// regression.
pub fn evaluate(model: &Model, graphs: &[Graph], indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss_sum = 0.0;
    let mut metric_sum = 0.0;
    for &i in indices {
        let g = &graphs[i];
        let t = Tape::new();
        let out = model.forward(&t, g)?;
        let l = supervised_loss(&t, &out.output, &g.label)?;
        loss_sum += l.item();
        match g.label {
            Label::Class(c) => {
                if argmax_row(&out.output.value()) == c {
                    metric_sum += 1.0;
                }
            }
            Label::Value(v) => {
                metric_sum += (out.output.value()[(0, 0)] - v).abs();
            }
        }
    }
    let n = indices.len() as f64;
    Ok((loss_sum / n, metric_sum / n))
}

fn metric_name_for(graphs: &[Graph]) -> &'static str {
    match graphs.first().map(|g| g.label) {
        Some(Label::Value(_)) => "mae",
        _ => "accuracy",
    }
}

/// Loss for one graph in the supervised phase: task loss plus whatever
/// auxiliaries the family uses.
fn supervised_graph_loss(
    model: &Model,
    cfg: &TrainConfig,
    t: &Tape,
    g: &Graph,
) -> Result<Tensor> {
    let out = model.forward(t, g)?;
    let mut loss = supervised_loss(t, &out.output, &g.label)?;
    let soft = matches!(
        model.spec().family,
        PoolFamily::Diffpool { .. } | PoolFamily::Gmn { .. }
    );
    if soft {
        for (adj_in, s) in &out.soft_levels {
            if cfg.link_weight != 0.0 {
                let link = link_prediction_loss(t, adj_in, s)?;
                loss = t.add(&loss, &t.scale(&link, cfg.link_weight))?;
            }
            if cfg.entropy_weight != 0.0 {
                let ent = entropy_loss(t, s)?;
                loss = t.add(&loss, &t.scale(&ent, cfg.entropy_weight))?;
            }
            if cfg.gmn_kl_weight != 0.0 && matches!(model.spec().family, PoolFamily::Gmn { .. }) {
                let kl = kl_purity_loss(t, s)?;
                loss = t.add(&loss, &t.scale(&kl, cfg.gmn_kl_weight))?;
            }
        }
    }
    Ok(loss)
}

/// Loss for one graph in the key phase: purity of every assignment.
fn key_graph_loss(model: &Model, t: &Tape, g: &Graph) -> Result<Tensor> {
    let out = model.forward(t, g)?;
    let mut loss: Option<Tensor> = None;
    for (_, s) in &out.soft_levels {
        let kl = kl_purity_loss(t, s)?;
        loss = Some(match loss {
            None => kl,
            Some(acc) => t.add(&acc, &kl)?,
        });
    }
    loss.ok_or_else(|| Error::contract("key phase on a model without assignments".to_string()))
}

/// Train `model` on the split, restore the best-validation weights, and
/// evaluate the test set once.
pub fn train_run(
    model: &Model,
    graphs: &[Graph],
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<RunResult> {
    if train_idx.is_empty() {
        return Err(Error::config("training split is empty".to_string()));
    }
    let trainable: Vec<(String, Tensor)> = model
        .trainable()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    let mut adam = Adam::new(trainable.clone());

    let alternating = matches!(
        model.spec().family,
        PoolFamily::Gmn {
            variant: GmnVariant::Kernel
        }
    ) && cfg.gmn_key_period > 0;

    let mut lr = cfg.lr;
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_weights: Vec<Mat> = trainable.iter().map(|(_, t)| t.value()).collect();
    let mut lr_stale = 0usize;
    let mut stop_stale = 0usize;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let key_phase = alternating && epoch % cfg.gmn_key_period == 0;
        let (phase, mask) = if key_phase {
            (Phase::Keys, UpdateMask::KeysOnly)
        } else if alternating {
            (Phase::Supervised, UpdateMask::ExceptKeys)
        } else {
            (Phase::Supervised, UpdateMask::All)
        };

        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng_from(&[cfg.seed, 0xe70c, epoch as u64]));

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            for (_, p) in &trainable {
                p.zero_grad();
            }
            for &i in batch {
                let g = &graphs[i];
                let t = Tape::new();
                let loss = if key_phase {
                    key_graph_loss(model, &t, g)?
                } else {
                    supervised_graph_loss(model, cfg, &t, g)?
                };
                let lv = loss.item();
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss became {lv} on graph {} in epoch {epoch}",
                        g.id
                    )));
                }
                epoch_loss += lv;
                t.backward(&loss)?;
            }
            let inv = 1.0 / batch.len() as f64;
            for (_, p) in &trainable {
                p.scale_grad(inv);
            }
            adam.step(lr, mask);
        }
        let train_loss = epoch_loss / train_idx.len() as f64;

        let (val_loss, val_metric) = evaluate(model, graphs, val_idx)?;
        // tiny datasets may have no validation split; fall back on the
        // training loss so the counters still mean something
        let sched_loss = if val_idx.is_empty() {
            train_loss
        } else {
            val_loss
        };

        history.push(EpochRecord {
            epoch,
            phase,
            lr,
            train_loss,
            val_loss,
            val_metric,
        });

        if sched_loss < best_val - cfg.improvement_tol {
            best_val = sched_loss;
            best_epoch = epoch;
            for ((_, p), w) in trainable.iter().zip(&mut best_weights) {
                *w = p.value();
            }
            lr_stale = 0;
            stop_stale = 0;
        } else {
            lr_stale += 1;
            stop_stale += 1;
            if lr_stale > cfg.lr_patience {
                lr = (lr * cfg.lr_decay_factor).max(cfg.min_lr);
                lr_stale = 0;
            }
            if stop_stale > cfg.early_stop_patience {
                break;
            }
        }
    }

    for ((_, p), w) in trainable.iter().zip(&best_weights) {
        p.set_value(w.clone());
    }
    let (test_loss, test_metric) = evaluate(model, graphs, test_idx)?;
    Ok(RunResult {
        history,
        best_epoch,
        best_val_loss: best_val,
        test_loss,
        test_metric,
        metric_name: metric_name_for(graphs),
    })
}
