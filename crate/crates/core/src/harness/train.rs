//! Minibatch training with best-validation checkpointing, learning-rate
//! reduction on plateaus and early stopping, all driven by validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::InputTransform;
use super::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::netcore::{mean_loss, train_step, AdamW, LayerStack};
use crate::preprocessing::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
    /// The checkpoint was replaced after this epoch.
    pub saved: bool,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LayerStack,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Validation-loss callbacks.
#[derive(Debug, Clone)]
struct Callbacks {
    plateau_best: f64,
    plateau_wait: usize,
    stop_best: f64,
    stop_wait: usize,
}

impl Callbacks {
    fn new() -> Self {
        Self {
            plateau_best: f64::INFINITY,
            plateau_wait: 0,
            stop_best: f64::INFINITY,
            stop_wait: 0,
        }
    }

    /// Returns the new learning rate and whether to stop.
    fn update(&mut self, loss: f64, lr: f64, cfg: &TrainingConfig) -> (f64, bool) {
        let mut lr = lr;
        if loss < self.plateau_best - cfg.plateau_min_delta {
            self.plateau_best = loss;
            self.plateau_wait = 0;
        } else {
            self.plateau_wait += 1;
            if self.plateau_wait >= cfg.plateau_patience && lr > cfg.min_learning_rate {
                lr = (lr * cfg.plateau_factor).max(cfg.min_learning_rate);
                self.plateau_wait = 0;
            }
        }
        if loss < self.stop_best {
            self.stop_best = loss;
            self.stop_wait = 0;
        } else {
            self.stop_wait += 1;
        }
        (lr, self.stop_wait >= cfg.early_stopping_patience)
    }
}

/// Trains `model` on `train` and returns the weights with the lowest
/// validation loss.
pub fn fit(
    mut model: LayerStack,
    dataset: &Dataset,
    transform: &InputTransform,
    train: &[usize],
    validation: &[usize],
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<Trained> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Data(
            "training and validation slices must be nonempty".into(),
        ));
    }
    let (val_x, val_y) = transform.batch(dataset, validation)?;
    let mut optimizer = AdamW::new(cfg.optimizer, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut order = train.to_vec();
    let mut callbacks = Callbacks::new();
    let mut best: Option<(LayerStack, usize, f64)> = None;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = transform.batch(dataset, batch)?;
            let loss = train_step(
                &mut model,
                &x,
                &y,
                &mut optimizer,
                cfg.label_smoothing,
                &mut rng,
            )
            .map_err(|e| match e {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("training diverged in epoch {epoch}: {m}"))
                }
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let validation_loss =
            mean_loss(&model, &val_x, &val_y, cfg.label_smoothing, cfg.eval_chunk)?;
        let lr = optimizer.learning_rate();
        let saved = best.as_ref().is_none_or(|b| validation_loss < b.2);
        if saved {
            best = Some((model.clone(), epoch, validation_loss));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            learning_rate: lr,
            saved,
        });
        let (next_lr, stop) = callbacks.update(validation_loss, lr, cfg);
        optimizer.set_learning_rate(next_lr);
        if stop {
            stopped_early = true;
            break;
        }
    }
    let (model, best_epoch, best_validation_loss) = best.expect("at least one epoch ran");
    Ok(Trained {
        model,
        best_epoch,
        best_validation_loss,
        history,
        stopped_early,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,validation_loss,learning_rate,saved\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.validation_loss, r.learning_rate, r.saved
        ));
    }
    s
}
