//! Sliding-window samples with train/validation/test splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::targets::{target_value, MeshPcas, Target, N_MESH_COMPONENTS};
use super::OperationSequence;
use crate::error::{invalid_input, Error, Result};
use crate::features::N_FEATURES;
use crate::rng;

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VALIDATION_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Where a sample came from: sequence index and the step its window ends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub sequence: usize,
    pub end_step: usize,
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows` of equal width; constant columns get unit scale.
    pub fn fit<'a, I>(width: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            n += 1;
            for j in 0..width {
                let d = row[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (row[j] - mean[j]);
            }
        }
        if n == 0 {
            return Err(invalid_input!("cannot fit a standardizer on no rows"));
        }
        let std = m2
            .iter()
            .zip(&mean)
            .map(|(&s, &m)| {
                let sd = libm::sqrt(s / n as f64);
                if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes a row-major block of rows in place.
    pub fn apply(&self, rows: &mut [f64]) {
        let w = self.width();
        for row in rows.chunks_mut(w) {
            for j in 0..w {
                row[j] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
    }

    pub fn scale(&self, j: usize, value: f64) -> f64 {
        (value - self.mean[j]) / self.std[j]
    }

    pub fn unscale(&self, j: usize, value: f64) -> f64 {
        value * self.std[j] + self.mean[j]
    }
}

/// Windowed samples. `inputs` is `[n_samples][window][n_features]`
/// flattened, in raw units; `scaler` holds training-split statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub window: usize,
    pub n_features: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<Target>,
    /// `[target][sample]`; NaN marks a sample without that target.
    pub target_values: Vec<Vec<f64>>,
    pub origins: Vec<SampleOrigin>,
    pub splits: Vec<Split>,
    pub scaler: Standardizer,
    pub sequence_names: Vec<String>,
}

impl WindowedDataset {
    pub fn n_samples(&self) -> usize {
        self.origins.len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.window * self.n_features;
        &self.inputs[i * len..(i + 1) * len]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn target_column(&self, target: Target) -> Option<&[f64]> {
        self.targets
            .iter()
            .position(|t| *t == target)
            .map(|k| self.target_values[k].as_slice())
    }

    /// Samples of `split` that carry a value for `target`.
    pub fn labelled(&self, split: Split, target: Target) -> Vec<usize> {
        match self.target_column(target) {
            Some(col) => self.indices(split).into_iter().filter(|&i| col[i].is_finite()).collect(),
            None => Vec::new(),
        }
    }
}

fn build(
    sequences: &[(usize, &OperationSequence)],
    window: usize,
    pcas: Option<&MeshPcas>,
    names: Vec<String>,
) -> Result<(WindowedDataset, Vec<String>)> {
    if window == 0 {
        return Err(invalid_input!("window must be positive"));
    }
    if let Some(p) = pcas {
        if p.power.n_components < N_MESH_COMPONENTS || p.flux.n_components < N_MESH_COMPONENTS {
            return Err(invalid_input!("PCA models must keep at least {N_MESH_COMPONENTS} components"));
        }
    }
    let targets: Vec<Target> = Target::all()
        .into_iter()
        .filter(|t| pcas.is_some() || !t.needs_pca())
        .collect();
    let mut warnings = Vec::new();
    let mut inputs = Vec::new();
    let mut origins = Vec::new();
    let mut target_values = vec![Vec::new(); targets.len()];
    for &(idx, seq) in sequences {
        if seq.len() < window {
            warnings.push(format!(
                "sequence `{}` has {} steps, fewer than the window {window}; skipped",
                seq.name,
                seq.len()
            ));
            continue;
        }
        let rows: Vec<[f64; N_FEATURES]> = seq.records.iter().map(|r| r.features.to_array()).collect();
        for end in window - 1..seq.len() {
            for row in &rows[end + 1 - window..=end] {
                inputs.extend_from_slice(row);
            }
            origins.push(SampleOrigin { sequence: idx, end_step: end });
            for (k, t) in targets.iter().enumerate() {
                target_values[k].push(target_value(seq, end, *t, pcas)?.unwrap_or(f64::NAN));
            }
        }
    }
    let n = origins.len();
    Ok((
        WindowedDataset {
            window,
            n_features: N_FEATURES,
            inputs,
            targets,
            target_values,
            origins,
            splits: vec![Split::Test; n],
            scaler: Standardizer::identity(N_FEATURES),
            sequence_names: names,
        },
        warnings,
    ))
}

/// Windows every non-held-out sequence, splits samples 70/15/15 by a seeded
/// shuffle and fits the feature scaler on the training windows.
///
/// Returns the dataset and warnings about skipped sequences.
pub fn window_dataset(
    sequences: &[OperationSequence],
    window: usize,
    pcas: Option<&MeshPcas>,
    split_seed: u64,
) -> Result<(WindowedDataset, Vec<String>)> {
    let chosen: Vec<(usize, &OperationSequence)> = sequences.iter().enumerate().filter(|(_, s)| !s.held_out).collect();
    let names = sequences.iter().map(|s| s.name.clone()).collect();
    let (mut ds, warnings) = build(&chosen, window, pcas, names)?;
    let n = ds.n_samples();
    if n < 3 {
        return Err(invalid_input!("only {n} samples; need at least 3 to split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(split_seed, &[rng::SPLIT]));
    let n_train = (libm::round(n as f64 * TRAIN_FRACTION) as usize).clamp(1, n - 2);
    let n_val = (libm::round(n as f64 * VALIDATION_FRACTION) as usize).clamp(1, n - n_train - 1);
    for (rank, &i) in order.iter().enumerate() {
        ds.splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    let train = ds.indices(Split::Train);
    let w = ds.n_features;
    let rows = train.iter().flat_map(|&i| ds.sample(i).chunks(w));
    ds.scaler = Standardizer::fit(w, rows)?;
    Ok((ds, warnings))
}

/// Windows one sequence (held out or not) for evaluation; every sample is
/// marked `Test` and `scaler` is reused verbatim.
pub fn window_sequence(
    seq: &OperationSequence,
    window: usize,
    pcas: Option<&MeshPcas>,
    scaler: &Standardizer,
) -> Result<WindowedDataset> {
    let (mut ds, warnings) = build(&[(0, seq)], window, pcas, vec![seq.name.clone()])?;
    if let Some(w) = warnings.into_iter().next() {
        return Err(invalid_input!("{w}"));
    }
    ds.scaler = scaler.clone();
    Ok(ds)
}
