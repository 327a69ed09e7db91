use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::{Network, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mini-batch training with seeded shuffling and early stopping.
///
/// Stops after `max_epochs` or once `patience` epochs pass without a strict
/// improvement of the validation loss; returns the best-validation
/// parameters.
pub fn fit<N: Network>(
    mut model: N,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(N, TrainingHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if val.is_empty() {
        return Err(Error::Input("empty validation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, 2));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params().len());
    let mut grad = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_refs: Vec<&Sample> = val.iter().collect();
    let mut batch: Vec<&Sample> = Vec::with_capacity(cfg.batch_size);

    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &train[i]));
            let loss = model.loss_and_grad(&batch, &mut grad)?;
            weighted += loss * chunk.len() as f64;
            opt.step(model.params_mut(), &grad)?;
        }
        let train_loss = weighted / train.len() as f64;
        let val_loss = model.batch_loss(&val_refs)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best.clone_from(&model);
        } else if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    log::debug!(
        "fit: {} epochs, best epoch {best_epoch} val {best_val:.6}",
        epochs.len()
    );
    Ok((
        best,
        TrainingHistory {
            epochs,
            best_epoch,
            best_val_loss: best_val,
            stopped_early,
        },
    ))
}
