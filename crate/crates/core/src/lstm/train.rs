//! Training loop, early stopping, k-fold architecture search, evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{learning_rate, AdamState};
use super::net::{batch_gradients, dropout_masks, forward};
use super::{LstmConfig, LstmModel};
use crate::error::{invalid_input, Error, Result};
use crate::rng;
use crate::sequence::{Split, Target, WindowedDataset};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean training loss per epoch (standardised target units, with L2).
    pub train_loss: Vec<f64>,
    /// Validation MSE per epoch (standardised target units).
    pub val_loss: Vec<f64>,
    /// One-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub optimizer_steps: u64,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue { improved: bool },
    Stop,
}

/// Patience-based stopping on validation loss with a minimum epoch count.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_epochs: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_epochs: usize) -> Self {
        Self {
            patience,
            min_epochs,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records the loss of the next epoch.
    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
        }
        if self.epoch >= self.min_epochs && self.epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue { improved }
        }
    }
}

struct Prepared {
    windows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

fn prepare(dataset: &WindowedDataset, indices: &[usize], column: &[f64], mean: f64, std: f64) -> Prepared {
    let mut windows = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for &i in indices {
        let mut w = dataset.sample(i).to_vec();
        dataset.scaler.apply(&mut w);
        windows.push(w);
        targets.push((column[i] - mean) / std);
    }
    Prepared { windows, targets }
}

fn mse(model: &LstmModel, data: &Prepared) -> f64 {
    let layout = model.layout();
    let mut s = 0.0;
    for (w, t) in data.windows.iter().zip(&data.targets) {
        let y = forward(&layout, &model.params, w, None);
        s += (y - t) * (y - t);
    }
    s / data.windows.len() as f64
}

fn column<'a>(dataset: &'a WindowedDataset, target: Target) -> Result<&'a [f64]> {
    dataset
        .target_column(target)
        .ok_or_else(|| Error::MissingTarget(target.name()))
}

/// Trains on the dataset's train split with early stopping on its
/// validation split.
pub fn train(config: &LstmConfig, dataset: &WindowedDataset, target: Target) -> Result<LstmModel> {
    let train_idx = dataset.labelled(Split::Train, target);
    let val_idx = dataset.labelled(Split::Validation, target);
    train_on(config, dataset, target, &train_idx, &val_idx)
}

/// Trains on explicit sample sets.
pub fn train_on(
    config: &LstmConfig,
    dataset: &WindowedDataset,
    target: Target,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<LstmModel> {
    config.validate()?;
    if dataset.window != config.window || dataset.n_features != config.input_dim {
        return Err(invalid_input!(
            "dataset shape {}x{} does not match config {}x{}",
            dataset.window,
            dataset.n_features,
            config.window,
            config.input_dim
        ));
    }
    let col = column(dataset, target)?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(invalid_input!("target `{}` has no training or validation samples", target.name()));
    }
    let ys: Vec<f64> = train_idx.iter().map(|&i| col[i]).collect();
    let (mean, std) = crate::math::mean_std(&ys);
    let std = if std > 0.0 { std } else { 1.0 };

    let mut model = LstmModel::init(config.clone(), target)?;
    model.input_scaler = dataset.scaler.clone();
    model.target_mean = mean;
    model.target_std = std;
    let train_data = prepare(dataset, train_idx, col, mean, std);
    let val_data = prepare(dataset, val_idx, col, mean, std);

    let layout = model.layout();
    let mut adam = AdamState::new(layout.total);
    let mut stopper = EarlyStopping::new(config.patience, config.min_epochs);
    let mut best_params = model.params.clone();
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..train_data.windows.len()).collect();

    'epochs: for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng::stream(config.seed, &[rng::SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let windows: Vec<&[f64]> = chunk.iter().map(|&i| train_data.windows[i].as_slice()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| train_data.targets[i]).collect();
            let masks: Option<Vec<Vec<Vec<f64>>>> = (config.recurrent_dropout > 0.0).then(|| {
                (0..chunk.len())
                    .map(|j| {
                        let seed = rng::derive_seed(config.seed, &[rng::DROPOUT, adam.step, j as u64]);
                        dropout_masks(&layout, config.recurrent_dropout, seed)
                    })
                    .collect()
            });
            let g = batch_gradients(&layout, &model.params, &windows, &targets, masks.as_deref(), config.l2_lambda);
            if !g.loss.is_finite() || g.grad.iter().any(|v| !v.is_finite()) {
                history.diverged = Some(format!("non-finite loss at epoch {} step {}", epoch + 1, adam.step));
                break 'epochs;
            }
            let lr = learning_rate(config.lr0, config.lr_decay_factor, config.lr_decay_every, adam.step);
            adam.update(&mut model.params, &g.grad, lr)?;
            epoch_loss += g.loss;
            batches += 1;
        }
        let val = mse(&model, &val_data);
        history.train_loss.push(epoch_loss / batches.max(1) as f64);
        history.val_loss.push(val);
        history.epochs_run = epoch + 1;
        if !val.is_finite() {
            history.diverged = Some(format!("non-finite validation loss at epoch {}", epoch + 1));
            break;
        }
        let decision = stopper.update(val);
        if let StopDecision::Continue { improved: true } = decision {
            best_params.copy_from_slice(&model.params);
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    history.optimizer_steps = adam.step;
    model.params = best_params;
    model.history = history;
    Ok(model)
}

/// Coefficient of determination and mean absolute error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the targets have zero variance.
    pub r_squared: Option<f64>,
    pub mae: f64,
    pub n: usize,
}

pub fn r_squared_mae(y: &[f64], y_hat: &[f64]) -> Result<EvalReport> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(invalid_input!("need equal, non-empty truth and prediction vectors"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let mae = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    Ok(EvalReport {
        r_squared: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        mae,
        n: y.len(),
    })
}

/// Scores `model` on the labelled samples of `split`.
pub fn evaluate(model: &LstmModel, dataset: &WindowedDataset, split: Split) -> Result<EvalReport> {
    let idx = dataset.labelled(split, model.target);
    evaluate_on(model, dataset, &idx)
}

pub fn evaluate_on(model: &LstmModel, dataset: &WindowedDataset, idx: &[usize]) -> Result<EvalReport> {
    if idx.is_empty() {
        return Err(invalid_input!("no labelled samples to evaluate `{}`", model.target.name()));
    }
    let col = column(dataset, model.target)?;
    let y: Vec<f64> = idx.iter().map(|&i| col[i]).collect();
    let y_hat = idx
        .iter()
        .map(|&i| model.predict(dataset.sample(i)))
        .collect::<Result<Vec<f64>>>()?;
    r_squared_mae(&y, &y_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub hidden_sizes: Vec<usize>,
    pub n_params: usize,
    /// Mean best validation loss over folds; `None` when nothing was
    /// trained.
    pub mean_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub target: Target,
    pub scores: Vec<CandidateScore>,
    pub best: Vec<usize>,
}

/// Assigns each of `indices` to one of `k` folds after a seeded shuffle.
pub fn folds(indices: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(&mut rng::stream(seed, &[rng::SPLIT, k as u64]));
    let mut out = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        out[pos % k].push(i);
    }
    out
}

/// k-fold comparison of hidden-layer candidates on the training split.
/// Ties go to the candidate with fewer parameters.
pub fn kfold_tune(
    candidates: &[Vec<usize>],
    base: &LstmConfig,
    dataset: &WindowedDataset,
    target: Target,
    k: usize,
) -> Result<TuneReport> {
    if k < 2 {
        return Err(invalid_input!("k-fold needs k >= 2, got {k}"));
    }
    if candidates.is_empty() {
        return Err(invalid_input!("no candidate architectures"));
    }
    let n_params = |h: &[usize]| base.clone().with_hidden(h).layout().total;
    if candidates.len() == 1 {
        return Ok(TuneReport {
            target,
            scores: vec![CandidateScore {
                hidden_sizes: candidates[0].clone(),
                n_params: n_params(&candidates[0]),
                mean_val_loss: None,
            }],
            best: candidates[0].clone(),
        });
    }
    let pool = dataset.labelled(Split::Train, target);
    let parts = folds(&pool, k, base.seed);
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let cfg = base.clone().with_hidden(cand);
        let mut total = 0.0;
        for f in 0..k {
            let val: &[usize] = &parts[f];
            let train: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != f)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            let m = train_on(&cfg, dataset, target, &train, val)?;
            let best = m.history.val_loss.get(m.history.best_epoch.saturating_sub(1)).copied().unwrap_or(f64::INFINITY);
            total += best;
        }
        scores.push(CandidateScore {
            hidden_sizes: cand.clone(),
            n_params: n_params(cand),
            mean_val_loss: Some(total / k as f64),
        });
    }
    let best = scores
        .iter()
        .min_by(|a, b| {
            let (la, lb) = (a.mean_val_loss.unwrap_or(f64::INFINITY), b.mean_val_loss.unwrap_or(f64::INFINITY));
            la.total_cmp(&lb).then(a.n_params.cmp(&b.n_params))
        })
        .map(|s| s.hidden_sizes.clone())
        .unwrap_or_default();
    Ok(TuneReport { target, scores, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn patience_arithmetic() {
        let mut s = EarlyStopping::new(25, 10);
        for e in 1..=50 {
            assert_ne!(s.update(100.0 - e as f64), StopDecision::Stop, "stopped at {e}");
        }
        let mut s = EarlyStopping::new(25, 10);
        let mut stopped = None;
        for e in 1..=100 {
            let loss = if e <= 12 { 100.0 - e as f64 } else { 88.0 };
            if s.update(loss) == StopDecision::Stop {
                stopped = Some(e);
                break;
            }
        }
        assert_eq!(stopped, Some(37));
        assert_eq!(s.best_epoch, 12);
    }

    #[test]
    fn minimum_epochs_respected() {
        let mut s = EarlyStopping::new(1, 10);
        for e in 1..10 {
            assert_ne!(s.update(5.0), StopDecision::Stop, "epoch {e}");
        }
        assert_eq!(s.update(5.0), StopDecision::Stop);
    }

    #[test]
    fn r_squared_examples() {
        let r = r_squared_mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_relative_eq!(r.r_squared.unwrap(), 0.5);
        assert_relative_eq!(r.mae, 1.0 / 3.0);
        let p = r_squared_mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((p.r_squared, p.mae), (Some(1.0), 0.0));
        let m = r_squared_mae(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(m.r_squared, Some(0.0));
        assert_eq!(r_squared_mae(&[4.0, 4.0], &[4.0, 3.0]).unwrap().r_squared, None);
    }

    #[test]
    fn folds_partition() {
        let idx: Vec<usize> = (0..103).map(|i| i * 3).collect();
        let f = folds(&idx, 5, 9);
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, idx);
        assert!(f.iter().all(|p| p.len() == 20 || p.len() == 21));
    }
}
