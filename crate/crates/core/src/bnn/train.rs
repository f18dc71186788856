use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelWeights, WindowSample};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs without improvement before the learning rate is decayed.
    pub plateau_patience: usize,
    pub lr_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Trailing fraction of each patient's windows held out for validation;
    /// with 0, checkpoints are selected on the training windows.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            max_epochs: 60,
            patience: 8,
            plateau_patience: 3,
            lr_decay: 0.5,
            grad_clip: 1.0,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.patience > 0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0
            && self.grad_clip >= 0.0
            && (0.0..1.0).contains(&self.val_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were returned; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    /// Validation loss of the weights after the last epoch run.
    pub final_val_loss: f64,
}

/// Keeps the trailing `fraction` of every group for validation so that no
/// validation window precedes a training window of the same patient.
pub fn split_temporal(groups: &[Vec<WindowSample>], fraction: f64) -> (Vec<WindowSample>, Vec<WindowSample>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for g in groups {
        let n = g.len();
        let mut n_val = (n as f64 * fraction).round() as usize;
        if fraction > 0.0 && n >= 2 {
            n_val = n_val.max(1);
        }
        n_val = n_val.min(n.saturating_sub(1));
        train.extend_from_slice(&g[..n - n_val]);
        val.extend_from_slice(&g[n - n_val..]);
    }
    (train, val)
}

/// Trains every parameter on windows grouped by patient.
pub fn train(init: &ModelWeights, groups: &[Vec<WindowSample>], config: &TrainConfig) -> Result<(ModelWeights, TrainHistory)> {
    config.validate()?;
    let (tr, val) = split_temporal(groups, config.val_fraction);
    if tr.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    fit(init, &tr, &val, config, false)
}

/// Adapts decoder and head to one patient with the encoder frozen. The
/// encoder parameters of the result are bit-identical to `foundation`'s.
pub fn finetune(foundation: &ModelWeights, windows: &[WindowSample], config: &TrainConfig) -> Result<(ModelWeights, TrainHistory)> {
    config.validate()?;
    if windows.is_empty() {
        log::warn!("fine-tuning skipped: patient dataset is empty");
        return Ok((foundation.clone(), TrainHistory::default()));
    }
    let (tr, val) = split_temporal(&[windows.to_vec()], config.val_fraction);
    fit(foundation, &tr, &val, config, true)
}

type Encoded = (Vec<f64>, Vec<f64>);

fn eval_loss(model: &ModelWeights, set: &[WindowSample], enc: Option<&[Encoded]>) -> Result<f64> {
    let per: Vec<Result<f64>> = set
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let e = enc.map(|e| (&e[i].0[..], &e[i].1[..]));
            let tr = model.trace(&s.inputs(), None, e)?;
            Ok(tr
                .outputs
                .iter()
                .zip(&s.target)
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                .sum::<f64>())
        })
        .collect();
    let mut sq = 0.0;
    for v in per {
        sq += v?;
    }
    Ok(sq / (set.len() * model.arch.t_fut * 2) as f64)
}

fn fit(
    init: &ModelWeights,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    config: &TrainConfig,
    freeze_encoder: bool,
) -> Result<(ModelWeights, TrainHistory)> {
    let val_set = if val_set.is_empty() {
        if config.val_fraction > 0.0 {
            log::warn!("no validation windows; early stopping monitors the training set");
        }
        train_set
    } else {
        val_set
    };
    let mut model = init.clone();
    let layout = model.layout();
    let encoder = layout.encoder();
    let trainable = if freeze_encoder { encoder.end..layout.len() } else { 0..layout.len() };

    let encode_all = |m: &ModelWeights, set: &[WindowSample]| -> Result<Vec<Encoded>> {
        set.par_iter().map(|s| m.encode(&s.inputs())).collect()
    };
    let (enc_train, enc_val) = if freeze_encoder {
        (Some(encode_all(&model, train_set)?), Some(encode_all(&model, val_set)?))
    } else {
        (None, None)
    };

    let mut velocity = vec![0.0; layout.len()];
    let mut lr = config.lr;
    let mut best = model.clone();
    let mut best_val = eval_loss(&model, val_set, enc_val.as_deref())?;
    let mut history = TrainHistory { best_val_loss: best_val, final_val_loss: best_val, ..Default::default() };
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let use_dropout = model.arch.dropout > 0.0;

    for epoch in 0..config.max_epochs {
        let mut rng = rng_from(config.seed, "epoch-shuffle", epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_sq = 0.0;
        for batch in order.chunks(config.batch_size) {
            let denom = (batch.len() * model.arch.t_fut * 2) as f64;
            let per: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mask = use_dropout.then(|| {
                        let mut r = rng_from(derive_seed(config.seed, "dropout-epoch", epoch as u64), "sample", i as u64);
                        model.sample_mask(&mut r)
                    });
                    let e = enc_train.as_ref().map(|e| (&e[i].0[..], &e[i].1[..]));
                    let mut g = vec![0.0; layout.len()];
                    let sq = model.accumulate_sample(&train_set[i], mask.as_deref(), e, 1.0 / denom, &mut g)?;
                    Ok((sq, g))
                })
                .collect();
            let mut grad = vec![0.0; layout.len()];
            for r in per {
                let (sq, g) = r?;
                epoch_sq += sq;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if !epoch_sq.is_finite() {
                return Err(Error::TrainingDivergence { epoch, loss: epoch_sq });
            }
            if config.grad_clip > 0.0 {
                let norm = grad[trainable.clone()].iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.grad_clip {
                    let s = config.grad_clip / norm;
                    grad[trainable.clone()].iter_mut().for_each(|g| *g *= s);
                }
            }
            for k in trainable.clone() {
                velocity[k] = config.momentum * velocity[k] + grad[k];
                let p = &mut model.params[k];
                *p -= lr * (velocity[k] + config.weight_decay * *p);
            }
        }
        let train_loss = epoch_sq / (train_set.len() * model.arch.t_fut * 2) as f64;
        let val_loss = eval_loss(&model, val_set, enc_val.as_deref())?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch, loss: val_loss });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");
        history.epochs.push(EpochStats { epoch, train_loss, val_loss, lr });
        history.final_val_loss = val_loss;
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_decay >= config.plateau_patience.max(1) {
                lr *= config.lr_decay;
                since_decay = 0;
            }
            if since_best >= config.patience {
                break;
            }
        }
    }
    history.best_val_loss = best_val;
    Ok((best, history))
}
