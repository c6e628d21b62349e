//! Mini-batch Adam training with plateau learning-rate decay and
//! best-validation-snapshot selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward, ForwardMode, Gradients, MlpModel};
use super::{cross_entropy_loss, softmax};
use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a new best validation accuracy before the learning
    /// rate is multiplied by `lr_decay_factor`.
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub l2_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            plateau_patience: 5,
            lr_decay_factor: 0.1,
            l2_weight: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly 0 is allowed and leaves parameters
    /// unchanged; it is useful for dry runs.
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr decay factor {}",
                self.lr_decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size 0".to_string()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::InvalidConfig("plateau patience 0".to_string()));
        }
        if !self.l2_weight.is_finite() || self.l2_weight < 0.0 {
            return Err(Error::InvalidConfig(format!("l2 weight {}", self.l2_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

/// Per-epoch curve plus which snapshot was kept. `best_epoch` 0 means the
/// initial model was never beaten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Adam with the standard moment estimates (β1 = 0.9, β2 = 0.999,
/// ε = 1e-8). A fresh state stepped with all-zero gradients leaves the
/// parameters bit-for-bit unchanged.
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

impl AdamState {
    pub fn new(model: &MlpModel) -> AdamState {
        AdamState {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, learning_rate: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let update = |theta: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
        };
        for l in 0..model.weights.len() {
            for i in 0..model.weights[l].data.len() {
                update(
                    &mut model.weights[l].data[i],
                    &mut self.m.weights[l].data[i],
                    &mut self.v.weights[l].data[i],
                    grads.weights[l].data[i],
                );
            }
            for i in 0..model.biases[l].len() {
                update(
                    &mut model.biases[l][i],
                    &mut self.m.biases[l][i],
                    &mut self.v.biases[l][i],
                    grads.biases[l][i],
                );
            }
        }
    }
}

fn check_data(model: &MlpModel, ds: &Dataset) -> Result<()> {
    if ds.feature_dim != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: ds.feature_dim,
        });
    }
    if ds.class_count != model.class_count() {
        return Err(Error::DimensionMismatch {
            expected: model.class_count(),
            got: ds.class_count,
        });
    }
    Ok(())
}

/// Fraction of dataset samples whose argmax logit is the true label,
/// under the deterministic forward. Ties break toward the lower class.
pub fn dataset_accuracy(model: &MlpModel, ds: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for s in &ds.samples {
        let (logits, _) = forward(model, &s.features, ForwardMode::Deterministic)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        if best == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Train a copy of the model by mini-batch Adam with per-epoch shuffling,
/// dropout active, and plateau decay of the learning rate; returns the
/// snapshot with the best validation accuracy (ties keep the earlier
/// epoch, including the untrained epoch-0 model).
pub fn train(
    model: &MlpModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    check_data(model, train_ds)?;
    check_data(model, val_ds)?;

    let mut current = model.clone();
    let mut adam = AdamState::new(&current);
    let mut learning_rate = cfg.learning_rate;
    let mut shuffle_rng = RngStream::new(cfg.seed, streams::TRAIN);
    let mut dropout_rng = RngStream::new(cfg.seed, streams::DROPOUT_BASE);

    let mut best_model = current.clone();
    let mut best_acc = dataset_accuracy(&current, val_ds)?;
    let mut best_epoch = 0usize;
    let mut epochs_since_best = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut indices: Vec<usize> = (0..train_ds.len()).collect();
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&current);
            for &i in batch {
                let s = &train_ds.samples[i];
                let (logits, cache) =
                    forward(&current, &s.features, ForwardMode::Dropout(&mut dropout_rng))
                        .map_err(|e| match e {
                            Error::NonFinite { .. } => {
                                Error::Diverged(format!("epoch {epoch}: {e}"))
                            }
                            other => other,
                        })?;
                let loss = cross_entropy_loss(&softmax(&logits), s.label);
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
                }
                loss_sum += loss;
                grads.accumulate(&backward(&current, &cache, s.label, 0.0)?);
            }
            grads.scale(1.0 / batch.len() as f64);
            if cfg.l2_weight != 0.0 {
                grads.add_l2(&current, cfg.l2_weight, 0..current.layer_count());
            }
            adam.step(&mut current, &grads, learning_rate);
        }
        let val_accuracy = dataset_accuracy(&current, val_ds)?;
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / train_ds.len() as f64,
            val_accuracy,
            learning_rate,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_model = current.clone();
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.plateau_patience {
                learning_rate *= cfg.lr_decay_factor;
                epochs_since_best = 0;
            }
        }
    }

    Ok((
        best_model,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_val_accuracy: best_acc,
        },
    ))
}
