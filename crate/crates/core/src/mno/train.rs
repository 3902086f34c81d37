use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::grad::{gradient_refs, mean_loss};
use super::loss::LossConfig;
use super::model::MnoModel;
use crate::error::{Error, Result};
use crate::grid::FlowField;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub scheduler_step: usize,
    pub scheduler_gamma: f64,
    pub adam: AdamConfig,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 5,
            learning_rate: 5e-4,
            scheduler_step: 10,
            scheduler_gamma: 0.5,
            adam: AdamConfig::default(),
            split: (0.70, 0.20, 0.10),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return bad(format!("split ({a}, {b}, {c}) must be fractions summing to 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.scheduler_step == 0 {
            return bad("epochs, batch_size and scheduler_step must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.scheduler_gamma > 0.0 && self.scheduler_gamma <= 1.0) {
            return bad(format!("scheduler_gamma {} not in (0, 1]", self.scheduler_gamma));
        }
        let adam = &self.adam;
        if !((0.0..1.0).contains(&adam.beta1) && (0.0..1.0).contains(&adam.beta2) && adam.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `lr · gamma^⌊epoch / step⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.learning_rate * cfg.scheduler_gamma.powi((epoch / cfg.scheduler_step) as i32)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into train/validation/test.
///
/// Validation and test sizes are `⌊n·fraction⌋`; training takes the rest,
/// so ten items split 7/2/1.
pub fn split_indices(n: usize, split: (f64, f64, f64), seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * split.1 + 1e-9).floor() as usize;
    let n_test = (n as f64 * split.2 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

/// Splits `dataset` 70/20/10 (per `cfg.split`) and trains on the first part.
///
/// Returns the parameters with the lowest validation loss.
pub fn train(
    model: MnoModel,
    dataset: &[(FlowField, FlowField)],
    cfg: &TrainConfig,
    loss_cfg: LossConfig,
) -> Result<(MnoModel, History)> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(Error::InvalidParameter(format!(
            "dataset of {} pairs is smaller than one batch of {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    let split = split_indices(dataset.len(), cfg.split, cfg.seed ^ 0x5eed_5917);
    let pick = |ids: &[usize]| -> Vec<(&FlowField, &FlowField)> {
        ids.iter().map(|&i| (&dataset[i].0, &dataset[i].1)).collect()
    };
    train_on_split(model, &pick(&split.train), &pick(&split.val), cfg, loss_cfg, |_| {})
}

/// Epoch loop over an explicit train/validation partition.
///
/// Batches are drawn from a seeded per-epoch shuffle; the scheduler is applied
/// per epoch. When `val` is empty the training loss selects the best epoch.
pub fn train_on_split(
    mut model: MnoModel,
    train: &[(&FlowField, &FlowField)],
    val: &[(&FlowField, &FlowField)],
    cfg: &TrainConfig,
    loss_cfg: LossConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(MnoModel, History)> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(Error::InvalidParameter(format!(
            "training split of {} pairs is smaller than one batch of {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.n_params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, MnoModel)> = None;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&FlowField, &FlowField)> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grads) = gradient_refs(&model, &batch, loss_cfg)?;
            epoch_loss += loss * chunk.len() as f64;
            adam_step(model.params_mut(), &grads, &mut state, lr, &cfg.adam)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(&model, val, loss_cfg)?
        };
        let stats = EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            history.best_epoch = epoch;
            best = Some((val_loss, model.clone()));
        }
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, history))
}
