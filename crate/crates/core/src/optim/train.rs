//! The epoch loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, clip_global_norm, AdamWConfig, OptimizerState};
use super::data::PreparedData;
use super::sampler::{epoch_batches, WindowSampler};
use super::schedule::lr_at_epoch;
use crate::error::{Error, Result};
use crate::network::{cross_entropy, ModelConfig, ModelParams};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub windows_per_epoch: usize,
    pub window_seconds: f64,
    pub seed: u64,
    pub test_windows_per_trial: usize,
    /// Clip-by-global-norm threshold; off when `None`.
    pub grad_clip: Option<f64>,
    /// Stop after this many epochs without a lower mean loss; off when `None`.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            batch_size: 256,
            max_epochs: 800,
            warmup_epochs: 40,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            windows_per_epoch: 12000,
            window_seconds: 1.0,
            seed: 0,
            test_windows_per_trial: 10,
            grad_clip: None,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::config(format!("train.{f}"), m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr", format!("must be positive, got {}", self.base_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.max_epochs > 0 && self.warmup_epochs >= self.max_epochs {
            return bad(
                "warmup_epochs",
                format!(
                    "{} must be below max_epochs {}",
                    self.warmup_epochs, self.max_epochs
                ),
            );
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(name, format!("must lie in (0, 1), got {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad("eps", format!("must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative".into());
        }
        if self.windows_per_epoch == 0 {
            return bad("windows_per_epoch", "must be at least 1".into());
        }
        if !(self.window_seconds > 0.0) {
            return bad("window_seconds", "must be positive".into());
        }
        if self.test_windows_per_trial == 0 {
            return bad("test_windows_per_trial", "must be at least 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip", "must be positive".into());
            }
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochTrace>,
    /// Optimizer steps taken.
    pub steps: u64,
    /// Every `(subject, trial)` pair that contributed a training window.
    pub visited: BTreeSet<(usize, usize)>,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.trace.len()
    }
}

/// Trains a fresh model on random windows drawn from `train_subjects`.
pub fn train(
    data: &PreparedData,
    train_subjects: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_subjects.is_empty() {
        return Err(Error::config("train", "at least one training subject is required"));
    }
    let window = data.window_samples(cfg.window_seconds)?;
    model_cfg.check_input(
        data.n_channels,
        data.feature_len(model_cfg.feature_mode, window),
    )?;
    if model_cfg.classes != data.n_classes {
        return Err(Error::Shape(format!(
            "model has {} classes, dataset has {}",
            model_cfg.classes, data.n_classes
        )));
    }
    let sampler = WindowSampler::new(data, train_subjects, window)?;
    let mut params = ModelParams::init(*model_cfg, rng::derive_seed(cfg.seed, &[tag::INIT]))?;
    let mut sample_rng = rng::stream(cfg.seed, &[tag::SAMPLER]);
    let mut dropout_rng = rng::stream(cfg.seed, &[tag::DROPOUT]);
    let adamw = cfg.adamw();
    let mut state = OptimizerState::new();
    let mut trace = Vec::with_capacity(cfg.max_epochs);
    let mut visited = BTreeSet::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        let mut loss_sum = 0.0;
        for n in epoch_batches(cfg.windows_per_epoch, cfg.batch_size) {
            let refs = sampler.sample_batch(&mut sample_rng, n);
            visited.extend(refs.iter().map(|r| (r.subject, r.trial)));
            let (x, labels) = data.batch(&refs, window, model_cfg.feature_mode)?;
            let (logits, cache) = params.forward_train(x.view(), &mut dropout_rng)?;
            let mut batch_loss = 0.0;
            for (row, &y) in logits.outer_iter().zip(&labels) {
                batch_loss += cross_entropy(row, y)?.value;
            }
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, state.step, "non-finite training loss", params));
            }
            loss_sum += batch_loss;
            let mut grads = params.backward(&cache, &labels)?.params;
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            let before = params.clone();
            if let Err(e) = adamw_step(&mut params, &grads, &mut state, lr, &adamw) {
                return Err(match e {
                    Error::Numeric(msg) => diverged(epoch, state.step, &msg, before),
                    other => other,
                });
            }
        }
        let mean_loss = loss_sum / cfg.windows_per_epoch as f64;
        trace.push(EpochTrace {
            epoch,
            lr,
            mean_loss,
        });
        if let Some(p) = cfg.patience {
            if mean_loss < best {
                best = mean_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        steps: state.step,
        visited,
    })
}

fn diverged(epoch: usize, step: u64, message: &str, last_finite: ModelParams) -> Error {
    Error::Diverged {
        epoch,
        step,
        message: message.to_string(),
        last_finite: Box::new(last_finite),
    }
}

/// Writes the trace as `epoch,lr,mean_loss` CSV.
pub fn trace_csv(trace: &[EpochTrace]) -> String {
    let mut out = String::from("epoch,lr,mean_loss\n");
    for t in trace {
        out.push_str(&format!("{},{:e},{:e}\n", t.epoch, t.lr, t.mean_loss));
    }
    out
}
