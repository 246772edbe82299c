//! Mini-batch training with early stopping on validation pinball loss.

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, total_loss_with_grad};
use super::model::{PoseLabel, PoseRegressor};
use super::optim::Adam;
use crate::phantom::ViewClass;
use crate::ModelError;

pub const MIN_RECORDS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    /// Share of the dataset held out for validation by [`train`].
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 8,
            clip_norm: 50.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One training record: a pooled slice, the queried class and its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub pooled: Vec<f64>,
    pub view: ViewClass,
    pub label: PoseLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_validation_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

/// Mean total loss per sample.
pub fn mean_loss(model: &PoseRegressor, samples: &[TrainSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let cfg = &model.config;
    let sum: f64 = samples
        .iter()
        .map(|s| {
            total_loss(
                &s.label,
                &model.forward_pooled(&s.pooled, s.view).0,
                &cfg.quantiles,
                cfg.lambda,
            )
        })
        .sum();
    sum / samples.len() as f64
}

/// Seeded shuffle, then the last `validation_fraction` becomes validation.
pub fn split_dataset(
    samples: &[TrainSample],
    validation_fraction: f64,
    seed: u64,
) -> (Vec<TrainSample>, Vec<TrainSample>) {
    let mut all = samples.to_vec();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b17));
    let n_val =
        Float::round((all.len() as f64) * validation_fraction.clamp(0.0, 0.5)).max(1.0) as usize;
    let val = all.split_off(all.len() - n_val.min(all.len() - 1));
    (all, val)
}

pub fn train(
    model: &mut PoseRegressor,
    dataset: &[TrainSample],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport, ModelError> {
    if dataset.len() < MIN_RECORDS {
        return Err(ModelError::DataUnderrun(dataset.len()));
    }
    let (train_set, val_set) = split_dataset(dataset, config.validation_fraction, config.seed);
    train_with_validation(model, &train_set, &val_set, config, on_epoch)
}

/// Trains on `train_set`, restoring the parameters of the best validation epoch.
pub fn train_with_validation(
    model: &mut PoseRegressor,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport, ModelError> {
    if train_set.len() + val_set.len() < MIN_RECORDS {
        return Err(ModelError::DataUnderrun(train_set.len() + val_set.len()));
    }
    if val_set.is_empty() || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(ModelError::InvalidConfig(
            "training needs validation data, a positive batch size and learning rate",
        ));
    }
    let expected = model.config.pooled_size * model.config.pooled_size;
    if let Some(bad) = train_set
        .iter()
        .chain(val_set)
        .find(|s| s.pooled.len() != expected)
    {
        return Err(ModelError::ShapeMismatch {
            expected: "pooled_size² values per sample",
            got: bad.pooled.len(),
        });
    }
    let quantiles = model.config.quantiles;
    let lambda = model.config.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut opt = Adam::new(config.learning_rate, config.clip_norm);
    let initial = mean_loss(model, val_set);
    let mut best = (0, initial, snapshot(model));
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            for &i in batch {
                let s = &train_set[i];
                let (pred, cache) = model.forward_pooled(&s.pooled, s.view);
                let (loss, grad) = total_loss_with_grad(&s.label, &pred, &quantiles, lambda);
                train_sum += loss;
                model.backward(&cache, &grad);
            }
            norm_sum += opt.step(&mut model.params_mut(), 1.0 / batch.len() as f64);
            batches += 1;
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: train_sum / train_set.len() as f64,
            validation_loss: mean_loss(model, val_set),
            gradient_norm: norm_sum / f64::from(batches),
        };
        on_epoch(&metrics);
        epochs.push(metrics);
        if metrics.validation_loss < best.1 {
            best = (epoch, metrics.validation_loss, snapshot(model));
        } else if epoch - best.0 >= config.patience {
            stopped_early = true;
            break;
        }
    }
    for (p, v) in model.params_mut().into_iter().zip(best.2) {
        p.value = v;
    }
    Ok(TrainReport {
        initial_validation_loss: initial,
        epochs,
        best_epoch: best.0,
        best_validation_loss: best.1,
        stopped_early,
    })
}

fn snapshot(model: &PoseRegressor) -> Vec<Vec<f64>> {
    model.params().iter().map(|p| p.value.clone()).collect()
}
