//! Training loop: per-step weighted multi-level loss, gradient clipping and
//! Adam; per-epoch validation, learning-rate halving and checkpoints.

mod eval;

use std::borrow::Cow;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{derive_seed, rng_from_seed};
use crate::echo::{Manifest, ScenarioItem, Talk};
use crate::error::{Error, Result};
use crate::metrics::{loss_weights, LossBreakdown};
use crate::model::TasNet;
use crate::nn::{clip_global_norm, Adam, Grads, Tape};

pub use eval::{evaluate, oracle_mask, pass_through, EvalOptions, System};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Items per optimizer step; gradients are averaged over them.
    pub batch_items: usize,
    pub lr_init: f64,
    /// Epochs without a new best validation loss before the rate halves.
    pub lr_halve_patience: usize,
    pub clip_norm: f64,
    /// Base of the per-level loss weights.
    pub loss_weight: f64,
    /// Remove means before SISNR.
    pub zero_mean: bool,
    /// Steps per epoch; `None` means one pass over the training items.
    pub steps_per_epoch: Option<usize>,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Train on random crops of this many samples instead of whole items.
    pub segment_len: Option<usize>,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_items: 2,
            lr_init: 1e-3,
            lr_halve_patience: 4,
            clip_norm: 5.0,
            loss_weight: std::f64::consts::FRAC_1_SQRT_2,
            zero_mean: true,
            steps_per_epoch: None,
            max_steps: None,
            segment_len: None,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults: five epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.epochs == 0 || self.batch_items == 0 {
            return bad("epochs and batch_items must be > 0");
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init must be positive");
        }
        if self.lr_halve_patience == 0 {
            return bad("lr_halve_patience must be >= 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.loss_weight > 0.0 && self.loss_weight.is_finite()) {
            return bad("loss_weight must be positive");
        }
        if self.steps_per_epoch == Some(0) || self.max_steps == Some(0) || self.segment_len == Some(0) {
            return bad("steps_per_epoch, max_steps and segment_len must be > 0 when set");
        }
        Ok(())
    }
}

/// Validation-driven halving: once the best validation loss has not
/// improved for `patience` consecutive epochs the rate halves and the
/// counter restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub patience: usize,
    pub lr: f64,
    pub best: f64,
    pub epochs_since_improvement: usize,
    pub halvings: u32,
}

impl LrSchedule {
    pub fn new(lr_init: f64, patience: usize) -> Self {
        Self {
            lr_init,
            patience,
            lr: lr_init,
            best: f64::INFINITY,
            epochs_since_improvement: 0,
            halvings: 0,
        }
    }

    /// Records one epoch's validation loss; returns true if the rate halved.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.epochs_since_improvement = 0;
            return false;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            self.halvings += 1;
            self.lr = self.lr_init * 0.5f64.powi(self.halvings as i32);
            self.epochs_since_improvement = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub schedule: LrSchedule,
    pub optimizer: Adam,
}

impl TrainState {
    pub fn lr(&self) -> f64 {
        self.schedule.lr
    }

    pub fn best_val_loss(&self) -> f64 {
        self.schedule.best
    }
}

/// One training example: LAEC residual, filter output and near-end target.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub s_aec: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub s: Vec<f64>,
}

impl Example {
    /// Window `[start, start + len)` of all three signals.
    pub fn crop(&self, start: usize, len: usize) -> Example {
        let r = start..start + len;
        Example {
            id: self.id.clone(),
            s_aec: self.s_aec[r.clone()].to_vec(),
            d_hat: self.d_hat[r.clone()].to_vec(),
            s: self.s[r].to_vec(),
        }
    }

    pub fn from_item(id: impl Into<String>, item: &ScenarioItem) -> Result<Self> {
        let id = id.into();
        let missing = |what: &str| Error::Manifest(format!("{id}: missing {what}"));
        Ok(Self {
            s_aec: item.s_aec.as_ref().ok_or_else(|| missing("s_aec; run the laec stage first"))?.samples.clone(),
            d_hat: item.d_hat.as_ref().ok_or_else(|| missing("d_hat; run the laec stage first"))?.samples.clone(),
            s: item.s.as_ref().ok_or_else(|| missing("near-end target"))?.samples.clone(),
            id,
        })
    }
}

/// Double-talk items of a manifest that has been through the LAEC stage.
/// Single-talk items have no near-end target and are skipped.
pub fn load_examples(manifest: &Manifest) -> Result<Vec<Example>> {
    manifest
        .records
        .iter()
        .filter(|r| r.talk == Talk::Double)
        .map(|r| Example::from_item(&r.id, &manifest.load_item(r)?))
        .collect()
}

/// Deterministic split: every `k`-th example (by position) goes to
/// validation, with `k = round(1 / fraction)`.
pub fn split_validation(examples: Vec<Example>, fraction: f64) -> (Vec<Example>, Vec<Example>) {
    if !(fraction > 0.0) || examples.len() < 2 {
        return (examples, Vec::new());
    }
    let k = ((1.0 / fraction).round() as usize).max(2);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, ex) in examples.into_iter().enumerate() {
        if i % k == k - 1 {
            val.push(ex);
        } else {
            train.push(ex);
        }
    }
    (train, val)
}

/// Weighted multi-level loss of one example, with parameter gradients when
/// `with_grad` is set.
pub fn example_loss(
    model: &TasNet,
    ex: &Example,
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Grads>)> {
    let mut tape = Tape::new(model.params());
    let g = model.graph(&mut tape, &ex.s_aec, Some(&ex.d_hat))?;
    let lw = loss_weights(cfg.loss_weight, g.intermediates.len() + 1);
    let last = tape.sisnr(g.s_hat, &ex.s, cfg.zero_mean)?;
    let mut terms = vec![(last, -lw.last)];
    let mut loss_i = Vec::with_capacity(g.intermediates.len());
    for (&v, &c) in g.intermediates.iter().zip(&lw.intermediate) {
        let s = tape.sisnr(v, &ex.s, cfg.zero_mean)?;
        loss_i.push(-tape.scalar(s));
        terms.push((s, -c));
    }
    let breakdown = LossBreakdown::new(-tape.scalar(last), loss_i, cfg.loss_weight);
    let grads = if with_grad {
        let total = tape.combine(&terms);
        Some(tape.backward(total)?)
    } else {
        None
    };
    Ok((breakdown, grads))
}

/// Mean weighted loss over `examples`.
pub fn mean_loss(model: &TasNet, examples: &[Example], cfg: &TrainConfig, jobs: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let losses = run_pool(jobs, || {
        examples
            .par_iter()
            .map(|ex| example_loss(model, ex, cfg, false).map(|(b, _)| b.total))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub(crate) fn run_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    /// Set on the last step of each epoch.
    pub val_loss: Option<f64>,
    pub lr: f64,
    /// Global gradient norm after clipping.
    pub grad_norm: f64,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,train_loss,val_loss,lr\n");
    for p in curve {
        let val = p.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", p.step, p.train_loss, val, p.lr);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub curve: Vec<CurvePoint>,
    pub val_losses: Vec<f64>,
}

const CROP_STREAM: u64 = 0x6372_6f70;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOSS_CURVE: &str = "loss_curve.csv";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains `model` in place. Validation falls back to the training items
/// when `val` is empty. Results are independent of `jobs`.
pub fn train(
    model: &mut TasNet,
    train_set: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    jobs: usize,
    mut on_epoch: impl FnMut(&TrainState, f64, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let val = if val.is_empty() { train_set } else { val };
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| train_set.len().div_ceil(cfg.batch_items));
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        schedule: LrSchedule::new(cfg.lr_init, cfg.lr_halve_patience),
        optimizer: Adam::new(model.params()),
    };
    let mut curve = Vec::new();
    let mut val_losses = Vec::new();
    let mut last_good = String::from("none");
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut shuffles = 0u64;

    'epochs: for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for _ in 0..steps_per_epoch {
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                break;
            }
            let mut batch = Vec::with_capacity(cfg.batch_items);
            while batch.len() < cfg.batch_items {
                if cursor == order.len() {
                    order = (0..train_set.len()).collect();
                    order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, shuffles)));
                    shuffles += 1;
                    cursor = 0;
                }
                let ex = &train_set[order[cursor]];
                let slot = (state.step * cfg.batch_items + batch.len()) as u64;
                batch.push(match cfg.segment_len {
                    Some(seg) if seg < ex.s.len() => {
                        let mut rng = rng_from_seed(derive_seed(cfg.seed ^ CROP_STREAM, slot));
                        Cow::Owned(ex.crop(rng.random_range(0..=ex.s.len() - seg), seg))
                    }
                    _ => Cow::Borrowed(ex),
                });
                cursor += 1;
            }
            let store = &*model;
            let results = run_pool(jobs, || {
                batch
                    .par_iter()
                    .map(|ex| example_loss(store, ex.as_ref(), cfg, true))
                    .collect::<Result<Vec<_>>>()
            })??;
            let mut grads = Grads::zeros_like(model.params());
            let mut loss = 0.0;
            for (b, g) in &results {
                loss += b.total;
                grads.add_assign(g.as_ref().expect("gradients requested"));
            }
            let n = results.len() as f64;
            loss /= n;
            grads.scale(1.0 / n);
            if !loss.is_finite() || !grads.is_finite() {
                if let Some(dir) = &cfg.checkpoint_dir {
                    write_file(&dir.join(LOSS_CURVE), &curve_csv(&curve))?;
                }
                return Err(Error::NonFiniteLoss {
                    step: state.step,
                    last_good,
                });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            state
                .optimizer
                .step(model.params_mut(), &grads, state.schedule.lr);
            curve.push(CurvePoint {
                step: state.step,
                train_loss: loss,
                val_loss: None,
                lr: state.schedule.lr,
                grad_norm: grads.global_norm(),
            });
            state.step += 1;
            epoch_loss += loss;
            epoch_steps += 1;
        }
        if epoch_steps == 0 {
            break 'epochs;
        }
        let val_loss = mean_loss(model, val, cfg, jobs)?;
        if let Some(p) = curve.last_mut() {
            p.val_loss = Some(val_loss);
        }
        val_losses.push(val_loss);
        let improved = val_loss < state.schedule.best;
        if let Some(dir) = &cfg.checkpoint_dir {
            let last = dir.join(LAST_CHECKPOINT);
            model.save(&last)?;
            last_good = last.display().to_string();
            if improved {
                model.save(dir.join(BEST_CHECKPOINT))?;
            }
            write_file(&dir.join(LOSS_CURVE), &curve_csv(&curve))?;
        }
        state.schedule.observe(val_loss);
        on_epoch(&state, epoch_loss / epoch_steps as f64, val_loss);
    }
    Ok(TrainOutcome {
        state,
        curve,
        val_losses,
    })
}

#[cfg(test)]
mod tests;
