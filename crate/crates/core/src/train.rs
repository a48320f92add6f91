//! Mini-batch training with Adam and early stopping on validation Hits@10.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, ParamStore};
use crate::data::Cascade;
use crate::eval::{evaluate, ModelScorer};
use crate::graph::DynamicGraph;
use crate::model::{DyHgcn, ModelConfig, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub seed: u64,
    /// Run every epoch and return the final weights instead of the best
    /// validation epoch.
    #[serde(default)]
    pub keep_last: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 50,
            patience: 10,
            seed: 0,
            keep_last: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy per scored step over the epoch.
    pub loss: f64,
    pub valid_hits10: f64,
}

impl EpochRecord {
    /// `epoch loss valid_hits@10`.
    pub fn log_line(&self) -> String {
        format!("{} {:.10} {:.6}", self.epoch, self.loss, self.valid_hits10)
    }
}

/// Owns a model and its optimizer state for step-by-step training.
pub struct Trainer<'g> {
    pub model: DyHgcn,
    pub adam: AdamState,
    graph: &'g DynamicGraph,
    batch_size: usize,
    shuffle_rng: ChaCha8Rng,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    /// Fresh model initialized from `config.seed`.
    pub fn new(model_config: ModelConfig, num_users: usize, graph: &'g DynamicGraph, config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = DyHgcn::new(model_config, num_users, config.seed)?;
        Ok(Self::resume(model, None, graph, config))
    }

    pub fn resume(model: DyHgcn, adam: Option<AdamState>, graph: &'g DynamicGraph, config: &TrainConfig) -> Self {
        let adam = adam.unwrap_or_else(|| AdamState::new(config.adam(), model.params()));
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1);
        Self {
            model,
            adam,
            graph,
            batch_size: config.batch_size,
            shuffle_rng,
            epoch: 0,
        }
    }

    /// One optimizer step on `batch`; returns the summed loss and step count.
    pub fn step(&mut self, batch: &[Cascade]) -> Result<(f64, usize), TrainError> {
        self.step_at(batch, 0)
    }

    fn step_at(&mut self, batch: &[Cascade], batch_index: usize) -> Result<(f64, usize), TrainError> {
        let epoch = self.epoch + 1;
        let diverged = move |detail: String| TrainError::Diverged {
            epoch,
            batch: batch_index,
            detail,
        };
        let out = match self.model.loss_and_grads(self.graph, batch) {
            Ok(out) => out,
            Err(ModelError::Autodiff(e @ AutodiffError::NonFinite(_))) => return Err(diverged(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        if !out.loss.is_finite() {
            return Err(diverged(format!("loss is {}", out.loss)));
        }
        self.adam
            .step(self.model.params_mut(), &out.grads)
            .map_err(|e| diverged(e.to_string()))?;
        Ok((out.loss, out.steps))
    }

    /// Shuffles `train`, runs every mini-batch, and returns the mean loss per step.
    pub fn run_epoch(&mut self, train: &[Cascade]) -> Result<f64, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let (mut total, mut steps) = (0.0, 0);
        for (b, chunk) in order.chunks(self.batch_size).enumerate() {
            let batch: Vec<Cascade> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, n) = self.step_at(&batch, b)?;
            total += loss;
            steps += n;
        }
        self.epoch += 1;
        Ok(total / steps.max(1) as f64)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }
}

/// Result of [`train`]: the best model by validation Hits@10.
pub struct TrainOutcome {
    pub model: DyHgcn,
    pub adam: AdamState,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_hits10: f64,
}

/// Trains on time-normalized `train` cascades, selecting the epoch with the
/// best validation Hits@10 and stopping after `patience` epochs without
/// improvement (unless `keep_last` is set).
pub fn train(train: &[Cascade], valid: &[Cascade], graph: &DynamicGraph, model_config: ModelConfig, num_users: usize, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if valid.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }
    let mut trainer = Trainer::new(model_config.clone(), num_users, graph, config)?;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ParamStore, AdamState)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let loss = trainer.run_epoch(train)?;
        let scorer = ModelScorer::new(&trainer.model, graph)?;
        let valid_hits10 = evaluate(&scorer, valid, &[10])?.hits(10).unwrap_or(0.0);
        let record = EpochRecord { epoch, loss, valid_hits10 };
        log::info!("{}", record.log_line());
        log.push(record);

        if config.keep_last {
            if epoch == config.epochs {
                best = Some((epoch, valid_hits10, trainer.model.params().clone(), trainer.adam.clone()));
            }
        } else if best.as_ref().is_none_or(|b| valid_hits10 > b.1) {
            best = Some((epoch, valid_hits10, trainer.model.params().clone(), trainer.adam.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_valid_hits10, params, adam) = match best {
        Some(b) => b,
        None => (0, 0.0, trainer.model.params().clone(), trainer.adam.clone()),
    };
    Ok(TrainOutcome {
        model: DyHgcn::from_params(model_config, num_users, params)?,
        adam,
        log,
        best_epoch,
        best_valid_hits10,
    })
}

/// Epoch log text, one `epoch loss valid_hits@10` line per epoch.
pub fn format_epoch_log(log: &[EpochRecord]) -> String {
    log.iter().map(|r| r.log_line() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.batch_size, 16);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
        assert_eq!(c.patience, 10);
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { patience: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn log_line_format() {
        let r = EpochRecord {
            epoch: 3,
            loss: 1.5,
            valid_hits10: 42.0,
        };
        assert_eq!(r.log_line(), "3 1.5000000000 42.000000");
    }
}
