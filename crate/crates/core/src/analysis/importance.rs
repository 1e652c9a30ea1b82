use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Surrogate;
use crate::error::{invalid_input, Result};
use crate::features::FEATURE_NAMES;
use crate::lstm::r_squared_mae;
use crate::rng;
use crate::sequence::{Split, Target, WindowedDataset};

/// Change in MAE when one input feature is permuted across samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub split: Split,
    pub targets: Vec<Target>,
    pub feature_names: Vec<String>,
    /// Per target.
    pub baseline_mae: Vec<f64>,
    /// `[feature][target]`, averaged over repetitions.
    pub delta_mae: Vec<Vec<f64>>,
    pub repetitions: usize,
    pub seed: u64,
}

impl ImportanceReport {
    pub fn delta(&self, feature: usize, target: Target) -> Option<f64> {
        let k = self.targets.iter().position(|t| *t == target)?;
        Some(self.delta_mae[feature][k])
    }
}

/// Permutes each feature column over whole samples of `split` (the same
/// sample permutation for all window positions) and records the rise in
/// MAE for every supported target the dataset labels.
pub fn permutation_importance<S: Surrogate + ?Sized>(
    models: &S,
    dataset: &WindowedDataset,
    split: Split,
    repetitions: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if repetitions == 0 {
        return Err(invalid_input!("repetitions must be at least 1"));
    }
    if models.window() != dataset.window {
        return Err(invalid_input!(
            "model window {} differs from dataset window {}",
            models.window(),
            dataset.window
        ));
    }
    let pool = dataset.indices(split);
    if pool.is_empty() {
        return Err(invalid_input!("split {split:?} is empty"));
    }
    let targets: Vec<Target> = models
        .targets()
        .into_iter()
        .filter(|t| !dataset.labelled(split, *t).is_empty())
        .collect();
    let w = dataset.n_features;
    let len = dataset.window * w;

    // Position within `pool` of each labelled sample, per target.
    let mut slots = Vec::with_capacity(targets.len());
    let mut truths = Vec::with_capacity(targets.len());
    for t in &targets {
        let col = dataset.target_column(*t).expect("labelled targets have a column");
        let (s, y): (Vec<usize>, Vec<f64>) = pool
            .iter()
            .enumerate()
            .filter(|(_, &i)| col[i].is_finite())
            .map(|(p, &i)| (p, col[i]))
            .unzip();
        slots.push(s);
        truths.push(y);
    }

    let score = |windows: &[f64]| -> Result<Vec<f64>> {
        targets
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let y_hat = slots[k]
                    .iter()
                    .map(|&p| models.predict(*t, &windows[p * len..(p + 1) * len]))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(r_squared_mae(&truths[k], &y_hat)?.mae)
            })
            .collect()
    };

    let mut base_windows = Vec::with_capacity(pool.len() * len);
    for &i in &pool {
        base_windows.extend_from_slice(dataset.sample(i));
    }
    let baseline = score(&base_windows)?;

    let mut delta = vec![vec![0.0; targets.len()]; w];
    let mut shuffled = base_windows.clone();
    for (j, row) in delta.iter_mut().enumerate() {
        for rep in 0..repetitions {
            let mut perm: Vec<usize> = (0..pool.len()).collect();
            perm.shuffle(&mut rng::stream(seed, &[rng::PERMUTE, j as u64, rep as u64]));
            shuffled.copy_from_slice(&base_windows);
            for (p, &src) in perm.iter().enumerate() {
                for step in 0..dataset.window {
                    shuffled[p * len + step * w + j] = base_windows[src * len + step * w + j];
                }
            }
            for (k, mae) in score(&shuffled)?.into_iter().enumerate() {
                row[k] += mae - baseline[k];
            }
        }
        row.iter_mut().for_each(|d| *d /= repetitions as f64);
    }
    Ok(ImportanceReport {
        split,
        targets,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        baseline_mae: baseline,
        delta_mae: delta,
        repetitions,
        seed,
    })
}
