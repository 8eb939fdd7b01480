//! Episodic end-to-end training with SGD, a step learning-rate schedule,
//! and best-on-validation snapshots.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{sgd_step, ParamSet};
use crate::episodes::{sample_train_episode, Dataset, EpisodeShape, NovelPool};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, Measure};
use crate::model::{Model, Objective, SpecialCase};
use crate::rng::{derive_seed, rng_from, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopping {
    pub monitor: Measure,
    /// Stop after this many epochs without improvement. `None` trains every
    /// epoch and only keeps the best snapshot.
    pub patience: Option<usize>,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            monitor: Measure::HMean,
            patience: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub lr_init: f64,
    /// Epochs after which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub objective: Objective,
    pub early_stopping: EarlyStopping,
    pub seed: u64,
    pub train_shape: EpisodeShape,
    pub val_shape: EpisodeShape,
    /// Validation episodes per epoch; 0 disables validation.
    pub n_val_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            episodes_per_epoch: 200,
            lr_init: 0.1,
            lr_milestones: Vec::new(),
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            objective: Objective::Gfsl,
            early_stopping: EarlyStopping::default(),
            seed: 0,
            train_shape: EpisodeShape::TRAIN_DEFAULT,
            val_shape: EpisodeShape::TEST_DEFAULT,
            n_val_episodes: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_milestones must be strictly increasing");
        }
        if self.lr_milestones.iter().any(|&m| m == 0 || m > self.epochs) {
            return bad("lr_milestones must lie within [1, epochs]");
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| epoch > m).count();
        self.lr_init * self.lr_decay_factor.powi(decays as i32)
    }

    fn val_config(&self) -> EvalConfig {
        EvalConfig {
            pool: NovelPool::Val,
            shape: self.val_shape,
            n_episodes: self.n_val_episodes,
            seed: derive_seed(self.seed, stream::VALIDATION, 0),
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Monitored validation metric, when validation ran.
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// Best validation snapshot, or the final model without validation.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
}

/// `epoch,lr,train_loss,val_metric` rows.
pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r).map_err(|e| Error::Eval(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Eval(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    fs::write(path, history_csv(history)?).map_err(|e| Error::io(path, e))
}

/// Under the FSL objective the seen prototypes never receive gradient, so
/// the joint-space classifier uses class means of the learned features.
fn finalize(model: &mut Model, ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if cfg.objective == Objective::Fsl {
        model.set_seen_prototypes_from_data(ds)?;
    }
    Ok(())
}

/// Monitored metric over fixed-seed episodes from the validation pool.
pub fn validate(model: &Model, ds: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let report = evaluate(model, ds, &cfg.val_config())?;
    Ok(report.get(cfg.early_stopping.monitor).mean)
}

/// One SGD update on one episode. Returns the loss.
pub fn train_step(model: &mut Model, ep: &crate::episodes::Episode, objective: Objective, lr: f64, cfg: &TrainConfig) -> Result<f64> {
    model.zero_grad();
    let loss = model.accumulate_gradients(ep, objective)?;
    if loss.is_finite() {
        sgd_step(model.params_mut(), lr, cfg.momentum, cfg.weight_decay);
    }
    Ok(loss)
}

pub fn train(mut model: Model, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if cfg.objective == Objective::Fsl && model.config().special_case != SpecialCase::PnPlus {
        return Err(Error::Config("the fsl objective is only supported for the pn_plus baseline".into()));
    }
    if model.config().d_in != ds.d_in() {
        return Err(Error::Config(format!(
            "model expects {}-dimensional inputs, dataset has {}",
            model.config().d_in,
            ds.d_in()
        )));
    }

    let validating = cfg.n_val_episodes > 0;
    let mut best = model.clone();
    let mut best_metric = None;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for i in 0..cfg.episodes_per_epoch {
            let index = ((epoch - 1) * cfg.episodes_per_epoch + i) as u64;
            let seed = derive_seed(cfg.seed, stream::TRAIN_EPISODE, index);
            let ep = sample_train_episode(ds, &cfg.train_shape, &mut rng_from(seed))?;
            let loss = train_step(&mut model, &ep, cfg.objective, lr, cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, seed });
            }
            total += loss;
        }
        let train_loss = if cfg.episodes_per_epoch > 0 {
            total / cfg.episodes_per_epoch as f64
        } else {
            f64::NAN
        };

        let val_metric = if validating {
            let mut snapshot = model.clone();
            finalize(&mut snapshot, ds, cfg)?;
            let metric = validate(&snapshot, ds, cfg)?;
            if best_metric.is_none_or(|b| metric > b) {
                best_metric = Some(metric);
                best_epoch = epoch;
                best = snapshot;
                since_best = 0;
            } else {
                since_best += 1;
            }
            Some(metric)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_metric,
        });
        if cfg.early_stopping.patience.is_some_and(|p| validating && since_best >= p) {
            break;
        }
    }

    if !validating {
        best = model;
        best_epoch = history.len();
        finalize(&mut best, ds, cfg)?;
    }
    for p in best.params_mut() {
        p.zero_grad();
        p.momentum.fill(0.0);
    }
    Ok(TrainedModel {
        model: best,
        history,
        best_epoch,
        best_metric,
    })
}
