//! Training and evaluation.

mod adam;
mod loss;
mod schedule;
mod split;

pub use adam::{AdamConfig, AdamState};
pub use loss::{sparse_ce_loss, LOSS_EPS};
pub use schedule::lr_at;
pub use split::{split, Partition, SplitAssignment, SplitCounts, SplitError};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::{AugmentParams, PreparedSet};
use crate::layers::Mode;
use crate::model::{Model, ModelError};
use crate::rng;
use crate::tensor::{Tensor, TensorError};

/// Batch size used by [`evaluate`]; it does not affect results.
pub const EVAL_BATCH: usize = 64;

// Stream tags for the per-purpose RNG streams derived from the run seed.
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the {0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub gamma: f64,
    pub step_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            step_epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub shuffle: bool,
    pub augment: AugmentParams,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 20,
            base_lr: 1e-3,
            schedule: Schedule::default(),
            seed: 42,
            shuffle: true,
            augment: AugmentParams::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Range checks that do not depend on the dataset.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(self.schedule.gamma > 0.0 && self.schedule.gamma <= 1.0) {
            return bad(format!("schedule.gamma {} outside (0, 1]", self.schedule.gamma));
        }
        if self.schedule.step_epochs == 0 {
            return bad("schedule.step_epochs must be at least 1".into());
        }
        self.augment
            .validate()
            .map_err(|m| TrainError::Config(format!("augment: {m}")))
    }
}

/// Per-epoch curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

impl History {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        for e in 0..self.epochs() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e,
                self.train_loss[e],
                self.train_accuracy[e],
                self.val_loss[e],
                self.val_accuracy[e],
                self.learning_rate[e]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_CSV_HEADER) {
            return Err(format!("history CSV must start with `{HISTORY_CSV_HEADER}`"));
        }
        let mut h = History::default();
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let parse = |i: usize| -> Result<f64, String> {
                cols.get(i)
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| format!("history row {}: bad column {}", row + 1, i))
            };
            if cols.len() != 6 {
                return Err(format!("history row {}: expected 6 columns", row + 1));
            }
            h.train_loss.push(parse(1)?);
            h.train_accuracy.push(parse(2)?);
            h.val_loss.push(parse(3)?);
            h.val_accuracy.push(parse(4)?);
            h.learning_rate.push(parse(5)?);
        }
        Ok(h)
    }
}

/// Outcome of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Class probabilities, `[N, K]`.
    pub scores: Tensor<f32>,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

/// Inference-mode pass over the given examples, without augmentation.
pub fn evaluate(model: &Model, data: &PreparedSet, indices: &[usize]) -> Result<EvalResult, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyPartition("evaluation"));
    }
    let k = model.spec.class_count;
    let mut scores = Vec::with_capacity(indices.len() * k);
    for chunk in indices.chunks(EVAL_BATCH) {
        let x = data.batch(chunk);
        let probs = model.forward_hybrid(&x, Mode::Infer, &mut rng::seeded(0))?;
        scores.extend_from_slice(probs.data());
    }
    let scores = Tensor::new(vec![indices.len(), k], scores)?;
    let labels = data.labels_of(indices);
    let (loss, _) = sparse_ce_loss(&scores, &labels)?;
    let predictions: Vec<usize> = scores.data().chunks(k).map(argmax).collect();
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(EvalResult {
        loss,
        accuracy: correct as f64 / indices.len() as f64,
        predictions,
        labels,
        scores,
    })
}

fn divergence(e: ModelError, epoch: usize, batch: usize) -> TrainError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { .. }) => TrainError::Divergence { epoch, batch },
        other => TrainError::Model(other),
    }
}

/// Trains `model` in place and returns the per-epoch history.
///
/// Each epoch shuffles the training indices, augments every batch, takes
/// one Adam step per batch at `lr_at(epoch)` (the last short batch is
/// kept), then measures the validation partition in inference mode.
pub fn train_loop(
    model: &mut Model,
    data: &PreparedSet,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<History, TrainError> {
    config.validate()?;
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    if split.labels.len() != data.len() {
        return Err(TrainError::Config(format!(
            "split covers {} examples but the dataset has {}",
            split.labels.len(),
            data.len()
        )));
    }
    if data.class_names.len() != model.spec.class_count {
        return Err(TrainError::Config(format!(
            "dataset has {} classes but the model predicts {}",
            data.class_names.len(),
            model.spec.class_count
        )));
    }
    let train_idx = split.indices(Partition::Train);
    let val_idx = split.indices(Partition::Val);
    if train_idx.is_empty() {
        return Err(TrainError::EmptyPartition("train"));
    }
    if val_idx.is_empty() {
        return Err(TrainError::EmptyPartition("val"));
    }
    if config.batch_size > train_idx.len() {
        return Err(TrainError::Config(format!(
            "batch_size {} exceeds the {} training examples",
            config.batch_size,
            train_idx.len()
        )));
    }

    let mut adam = AdamState::new(config.adam);
    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        let mut order = train_idx.clone();
        if config.shuffle {
            order.shuffle(&mut rng::stream(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = data.augmented_batch(chunk, &config.augment, config.seed, epoch as u64);
            let labels = data.labels_of(chunk);
            let mut drop_rng = rng::stream(config.seed, &[DROPOUT_STREAM, epoch as u64, b as u64]);
            let (_, probs, trace) = model
                .forward_traced(&x, Mode::Train, &mut drop_rng)
                .map_err(|e| divergence(e, epoch, b))?;
            let (loss, d_logits) = sparse_ce_loss(&probs, &labels)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: b });
            }
            loss_sum += loss * chunk.len() as f64;
            let k = model.spec.class_count;
            correct += probs
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            let grads = model.backward(&trace, &d_logits).map_err(|e| divergence(e, epoch, b))?;
            adam.step_model(model, &grads, lr)
                .map_err(|e| divergence(e.into(), epoch, b))?;
        }
        let val = evaluate(model, data, &val_idx)?;
        history.train_loss.push(loss_sum / order.len() as f64);
        history.train_accuracy.push(correct as f64 / order.len() as f64);
        history.val_loss.push(val.loss);
        history.val_accuracy.push(val.accuracy);
        history.learning_rate.push(lr);
        log::info!(
            "epoch {epoch}: train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4} lr={lr}",
            history.train_loss[epoch],
            history.train_accuracy[epoch],
            val.loss,
            val.accuracy
        );
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn history_csv_round_trip() {
        let h = History {
            train_loss: vec![1.5, 0.25],
            train_accuracy: vec![0.5, 0.875],
            val_loss: vec![1.25, 0.5],
            val_accuracy: vec![0.625, 0.75],
            learning_rate: vec![0.001, 0.0005],
        };
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,lr\n0,1.5,0.5,1.25,0.625,0.001\n"));
        assert_eq!(History::from_csv(&csv).unwrap(), h);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                base_lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                schedule: Schedule {
                    gamma: 1.5,
                    step_epochs: 5,
                },
                ..Default::default()
            },
            TrainConfig {
                schedule: Schedule {
                    gamma: 0.5,
                    step_epochs: 0,
                },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
