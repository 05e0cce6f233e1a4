//! Minibatch Adam training with step-addressed randomness.
//!
//! The permutation of epoch `e` comes from stream `(seed, Epoch, e)` and the
//! augmentation/noise of global step `t` from `(seed, Augment, t)`, so a run
//! can be stopped after any step and resumed bitwise.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::optim::Adam;
use crate::rng::{Purpose, RngState};

use super::augment::{AugmentationConfig, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Epochs(u64),
    Iterations(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub budget: Budget,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 0.0,
            batch_size: 256,
            budget: Budget::Epochs(200),
            seed: 0,
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        self.augmentation.validate()
    }
}

/// A model that can score a minibatch of training rows.
pub trait Objective: Module {
    /// Mean loss over the batch. With `backprop` the gradients are
    /// accumulated (the trainer zeroes them beforehand).
    fn batch_loss(&mut self, data: &TrainData, rows: &[usize], cfg: &TrainConfig, rng: &mut RngState, backprop: bool) -> Result<f64>;
}

/// Number of optimizer steps per epoch; a trailing batch of one row is dropped.
pub fn steps_per_epoch(n_rows: usize, batch_size: usize) -> u64 {
    let full = n_rows / batch_size;
    let rest = n_rows % batch_size;
    (full + usize::from(rest >= 2)) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub step: u64,
    /// Mean batch loss of every completed epoch.
    pub loss_curve: Vec<f64>,
    pub partial_sum: f64,
    pub partial_batches: u64,
}

#[derive(Debug, Clone)]
pub struct Trainer<M: Objective> {
    pub model: M,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub progress: TrainProgress,
}

impl<M: Objective> Trainer<M> {
    pub fn new(mut model: M, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::for_module(&mut model, config.lr, config.weight_decay);
        Ok(Self {
            model,
            optimizer,
            config,
            progress: TrainProgress {
                step: 0,
                loss_curve: Vec::new(),
                partial_sum: 0.0,
                partial_batches: 0,
            },
        })
    }

    fn batch_rows(&self, n_rows: usize) -> Vec<usize> {
        let per_epoch = steps_per_epoch(n_rows, self.config.batch_size);
        let epoch = self.progress.step / per_epoch;
        let k = (self.progress.step % per_epoch) as usize;
        let perm = RngState::derive(self.config.seed, Purpose::Epoch, epoch).permutation(n_rows);
        let start = k * self.config.batch_size;
        perm[start..(start + self.config.batch_size).min(n_rows)].to_vec()
    }

    /// One optimizer step. On a non-finite loss or gradient the parameters,
    /// buffers, optimizer and progress are left as before the call.
    pub fn step(&mut self, data: &TrainData) -> Result<f64> {
        let n = data.n_rows();
        if steps_per_epoch(n, self.config.batch_size) == 0 {
            return Err(Error::DegenerateBatch(n));
        }
        let rows = self.batch_rows(n);
        let mut rng = RngState::derive(self.config.seed, Purpose::Augment, self.progress.step);
        let buffers = buffer_snapshot(&mut self.model);
        let result = (|| {
            self.model.zero_grad();
            let loss = self.model.batch_loss(data, &rows, &self.config, &mut rng, true)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss {loss} at step {}", self.progress.step)));
            }
            self.optimizer.step(&mut self.model)?;
            Ok(loss)
        })();
        let loss = match result {
            Ok(l) => l,
            Err(e) => {
                restore_buffers(&mut self.model, &buffers);
                self.model.zero_grad();
                return Err(match e {
                    Error::Numeric(m) | Error::Domain(m) => Error::Divergence(format!("{m} at step {}", self.progress.step)),
                    other => other,
                });
            }
        };
        let p = &mut self.progress;
        p.step += 1;
        p.partial_sum += loss;
        p.partial_batches += 1;
        if p.step.is_multiple_of(steps_per_epoch(n, self.config.batch_size)) {
            p.loss_curve.push(p.partial_sum / p.partial_batches as f64);
            p.partial_sum = 0.0;
            p.partial_batches = 0;
        }
        Ok(loss)
    }

    /// Runs `budget` further steps (or epochs).
    pub fn run(&mut self, data: &TrainData, budget: Budget) -> Result<()> {
        let steps = match budget {
            Budget::Iterations(s) => s,
            Budget::Epochs(e) => e * steps_per_epoch(data.n_rows(), self.config.batch_size),
        };
        for _ in 0..steps {
            self.step(data)?;
        }
        Ok(())
    }

    /// Runs the configured budget.
    pub fn run_configured(&mut self, data: &TrainData) -> Result<()> {
        self.run(data, self.config.budget)
    }

    /// Model, optimizer state and progress; `meta` is stored alongside.
    pub fn to_checkpoint(&mut self, mut meta: serde_json::Value) -> Result<Checkpoint> {
        if let serde_json::Value::Object(m) = &mut meta {
            m.insert("progress".into(), serde_json::to_value(&self.progress)?);
            m.insert("train_config".into(), serde_json::to_value(self.config)?);
        } else {
            return Err(Error::Checkpoint("checkpoint meta must be a JSON object".into()));
        }
        let mut ck = Checkpoint::new(meta);
        ck.capture("model", &mut self.model);
        ck.capture("optim", &mut self.optimizer);
        Ok(ck)
    }

    /// Restores optimizer and progress from `ck` into a trainer built
    /// around a model of the same architecture.
    pub fn from_checkpoint(mut model: M, ck: &Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(
            ck.meta.get("train_config").cloned().ok_or_else(|| Error::Checkpoint("missing train_config".into()))?,
        )?;
        let progress: TrainProgress = serde_json::from_value(
            ck.meta.get("progress").cloned().ok_or_else(|| Error::Checkpoint("missing progress".into()))?,
        )?;
        ck.restore("model", &mut model)?;
        let mut t = Self::new(model, config)?;
        ck.restore("optim", &mut t.optimizer)?;
        t.progress = progress;
        Ok(t)
    }
}

fn buffer_snapshot(m: &mut dyn Module) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    m.visit("", &mut |t| {
        if t.grad.is_none() {
            out.push(t.value.to_vec());
        }
    });
    out
}

fn restore_buffers(m: &mut dyn Module, saved: &[Vec<f64>]) {
    let mut i = 0;
    m.visit("", &mut |t| {
        if t.grad.is_none() {
            t.value.copy_from_slice(&saved[i]);
            i += 1;
        }
    });
}
