use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{FamilyBatch, ModelConfig, ModelDims, ProportionsModel};
use crate::data_io::TrainingWindow;
use crate::hierarchy::Family;
use crate::matrix::Matrix;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// All windows of one family for one split.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub family: Family,
    pub windows: Vec<TrainingWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|e| self.epochs.iter().find(|r| r.epoch == e))
    }
}

/// Adaptive-moment optimizer with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[Matrix]) -> Self {
        let zeros = |ms: &[Matrix]| ms.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(shapes),
            v: zeros(shapes),
        }
    }

    pub fn update(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (((w, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Step schedule: the base rate is multiplied by `factor` at each of
/// `count` evenly spaced epochs `⌊k·max_epochs/(count+1)⌋`, `k = 1..=count`.
pub fn learning_rate_at(base: f64, factor: f64, count: usize, max_epochs: usize, epoch: usize) -> f64 {
    let decays = (1..=count).filter(|&k| k * max_epochs / (count + 1) <= epoch).count();
    base * factor.powi(decays as i32)
}

fn split_batches<'a>(set: &'a WindowSet, order: &[usize], size: usize) -> Vec<FamilyBatch<'a>> {
    order
        .chunks(size)
        .map(|chunk| {
            let ws: Vec<&TrainingWindow> = chunk.iter().map(|&i| &set.windows[i]).collect();
            FamilyBatch::from_windows(&set.family, &ws)
        })
        .filter(|b| b.active_rows() > 0)
        .collect()
}

/// Row-weighted mean loss over every window of `sets`.
fn evaluate(model: &ProportionsModel, sets: &[WindowSet]) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for set in sets {
        let order: Vec<usize> = (0..set.windows.len()).collect();
        for batch in split_batches(set, &order, model.config.batch_size) {
            let n = batch.active_rows();
            total += model.loss(&batch)? * n as f64;
            rows += n;
        }
    }
    if rows == 0 {
        return Err(Error::Data("no unmasked validation targets".into()));
    }
    Ok(total / rows as f64)
}

fn dims_from(sets: &[WindowSet], num_nodes: usize) -> Result<ModelDims> {
    let w = sets
        .iter()
        .flat_map(|s| s.windows.first())
        .next()
        .ok_or_else(|| Error::Data("no training windows".into()))?;
    Ok(ModelDims {
        num_nodes,
        covariate_dim: w.inputs.covariates.cols(),
        history: w.inputs.history_props.rows(),
        horizon: w.targets.rows(),
    })
}

/// Trains one global parameter set on minibatches that each hold windows
/// of a single family.
///
/// Batch order is reshuffled every epoch from a generator seeded by
/// `config.seed`, so a run is fully reproducible. The kept weights are
/// those of the epoch with the lowest validation loss; training stops once
/// `patience` epochs in a row fail to improve it.
pub fn train(
    train_sets: &[WindowSet],
    validation_sets: &[WindowSet],
    config: ModelConfig,
    node_names: Vec<String>,
) -> Result<ProportionsModel> {
    config.validate()?;
    let dims = dims_from(train_sets, node_names.len())?;
    if validation_sets.iter().all(|s| s.windows.is_empty()) {
        return Err(Error::Data("no validation windows".into()));
    }
    let mut model = ProportionsModel::new(config.clone(), dims, node_names)?;
    let mut adam = Adam::new(model.params.values());
    let mut rng = stream_rng(config.seed, 1);
    let mut best: Option<(f64, super::ParamSet, usize)> = None;
    let mut stale = 0usize;
    let mut history = TrainingHistory::default();

    for epoch in 0..config.max_epochs {
        let lr = learning_rate_at(
            config.learning_rate,
            config.lr_decay_factor,
            config.lr_decay_count,
            config.max_epochs,
            epoch,
        );
        let mut batches = Vec::new();
        for set in train_sets {
            let mut order: Vec<usize> = (0..set.windows.len()).collect();
            order.shuffle(&mut rng);
            batches.extend(split_batches(set, &order, config.batch_size));
        }
        if batches.is_empty() {
            return Err(Error::Data("no training windows with unmasked targets".into()));
        }
        batches.shuffle(&mut rng);

        let mut total = 0.0;
        let mut rows = 0usize;
        for batch in &batches {
            let (loss, grads) = model.loss_and_gradients(batch, true)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss {loss}; parameter norms: {}", model.params.norm_report()),
                });
            }
            adam.update(model.params.values_mut(), &grads, lr);
            let n = batch.active_rows();
            total += loss * n as f64;
            rows += n;
        }
        let train_loss = total / rows as f64;
        let validation_loss = evaluate(&model, validation_sets)?;
        if !validation_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {validation_loss}"),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            validation_loss,
        });
        log::debug!("epoch {epoch}: lr {lr:.2e} train {train_loss:.5} validation {validation_loss:.5}");

        if best.as_ref().is_none_or(|(b, _, _)| validation_loss < *b) {
            best = Some((validation_loss, model.params.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                history.stopped_early = epoch + 1 < config.max_epochs;
                break;
            }
        }
    }
    let (_, params, epoch) = best.expect("at least one epoch ran");
    model.params = params;
    history.best_epoch = Some(epoch);
    model.history = history;
    Ok(model)
}
