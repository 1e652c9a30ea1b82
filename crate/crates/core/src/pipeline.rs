//! Corpus to trained model set: PCA fit, windowing and per-target training.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_state, Result};
use crate::lstm::{train, LstmConfig, LstmModel, ModelSet};
use crate::pca::{MeshKind, PcaModel};
use crate::rng;
use crate::runin::Retrainer;
use crate::sequence::{window_dataset, MeshPcas, OperationSequence, Target, WindowedDataset, N_MESH_COMPONENTS};

/// Hidden layer sizes that won the architecture search for each target in
/// the reference study.
pub fn default_hidden(target: Target) -> Vec<usize> {
    match target {
        Target::Reactivity => vec![256, 128],
        Target::PowerPc(i) => match i {
            0 => vec![64],
            2 => vec![32],
            _ => vec![256, 128],
        },
        Target::FluxPc(i) => match i {
            0 | 1 => vec![256],
            2 => vec![64, 4],
            3 => vec![256, 128],
            _ => vec![128, 64],
        },
        Target::NextFeature(j) => match j {
            5 => vec![32, 4],
            6 | 8 => vec![64],
            7 | 9 => vec![256],
            10 => vec![32],
            11 | 15 => vec![128, 64],
            12 => vec![128, 8],
            13 => vec![64],
            14 | 17 => vec![256, 128],
            16 => vec![64, 4],
            18 => vec![16, 8],
            19 => vec![256],
            _ => vec![32],
        },
    }
}

/// How to turn a corpus into models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    /// Shared hyperparameters; `hidden_sizes` and `seed` are overridden per
    /// target.
    pub base: LstmConfig,
    pub targets: Vec<Target>,
    /// Hidden sizes per target; targets not listed use `default_hidden`.
    #[serde(default)]
    pub hidden: Vec<(Target, Vec<usize>)>,
    /// `None` means the reference sizes of [`default_hidden`].
    pub default_hidden: Option<Vec<usize>>,
    pub pca_components: usize,
    pub split_seed: u64,
}

impl TrainingPlan {
    pub fn new(base: LstmConfig, targets: Vec<Target>) -> Self {
        Self {
            base,
            targets,
            hidden: Vec::new(),
            default_hidden: None,
            pca_components: N_MESH_COMPONENTS,
            split_seed: 0,
        }
    }

    pub fn config_for(&self, target: Target) -> LstmConfig {
        let hidden = self
            .hidden
            .iter()
            .find(|(t, _)| *t == target)
            .map(|(_, h)| h.clone())
            .or_else(|| self.default_hidden.clone())
            .unwrap_or_else(|| default_hidden(target));
        let index = Target::all().iter().position(|t| *t == target).unwrap_or(0) as u64;
        let mut c = self.base.clone().with_hidden(&hidden);
        c.seed = rng::derive_seed(self.base.seed, &[rng::INIT, index]);
        c
    }

    pub fn needs_pca(&self) -> bool {
        self.targets.iter().any(|t| t.needs_pca())
    }
}

/// Fits power and flux PCA on every recorded mesh of the corpus.
pub fn fit_mesh_pcas(sequences: &[OperationSequence], n_components: usize) -> Result<MeshPcas> {
    let power: Vec<Vec<f64>> = sequences
        .iter()
        .filter(|s| !s.held_out)
        .flat_map(|s| s.records.iter().map(|r| r.power_mesh.clone()))
        .collect();
    let flux: Vec<Vec<f64>> = sequences
        .iter()
        .filter(|s| !s.held_out)
        .flat_map(|s| s.records.iter().map(|r| r.flux_mesh.clone()))
        .collect();
    Ok(MeshPcas {
        power: PcaModel::fit(MeshKind::Power, &power, n_components)?,
        flux: PcaModel::fit(MeshKind::Flux, &flux, n_components)?,
    })
}

/// PCA (when needed) and the windowed dataset for `plan`.
pub fn prepare(
    plan: &TrainingPlan,
    sequences: &[OperationSequence],
) -> Result<(WindowedDataset, Option<MeshPcas>, Vec<String>)> {
    let pcas = if plan.needs_pca() {
        Some(fit_mesh_pcas(sequences, plan.pca_components)?)
    } else {
        None
    };
    let (ds, warnings) = window_dataset(sequences, plan.base.window, pcas.as_ref(), plan.split_seed)?;
    Ok((ds, pcas, warnings))
}

/// Trains every target of `plan` one after another.
pub fn train_targets(plan: &TrainingPlan, dataset: &WindowedDataset) -> Result<ModelSet> {
    let mut set = ModelSet::default();
    for t in &plan.targets {
        set.insert(train(&plan.config_for(*t), dataset, *t)?);
    }
    Ok(set)
}

/// Fails when any model stopped on a non-finite loss.
pub fn check_converged(models: &[LstmModel]) -> Result<()> {
    match models.iter().find(|m| m.history.diverged.is_some()) {
        Some(m) => Err(invalid_state!(
            "training of `{}` diverged: {}",
            m.target.name(),
            m.history.diverged.as_deref().unwrap_or("")
        )),
        None => Ok(()),
    }
}

/// Single-threaded retrainer for the run-in loop.
#[derive(Debug, Clone)]
pub struct SequentialRetrainer {
    pub plan: TrainingPlan,
}

impl Retrainer for SequentialRetrainer {
    type Models = ModelSet;

    fn retrain(&mut self, sequences: &[OperationSequence]) -> Result<ModelSet> {
        let (ds, _, _) = prepare(&self.plan, sequences)?;
        let set = train_targets(&self.plan, &ds)?;
        check_converged(&set.models)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sizes_cover_all_targets() {
        let all = Target::all();
        assert_eq!(default_hidden(Target::Reactivity), vec![256, 128]);
        assert_eq!(default_hidden(Target::NextFeature(18)), vec![16, 8]);
        assert_eq!(default_hidden(Target::NextFeature(20)), vec![32]);
        assert!(all.iter().all(|t| !default_hidden(*t).is_empty()));
    }

    #[test]
    fn per_target_configs_differ_in_seed() {
        let plan = TrainingPlan::new(LstmConfig::default(), Target::all());
        let a = plan.config_for(Target::Reactivity);
        let b = plan.config_for(Target::PowerPc(0));
        assert_ne!(a.seed, b.seed);
        assert_eq!(b.hidden_sizes, vec![64]);
        let mut small = plan.clone();
        small.default_hidden = Some(vec![8]);
        assert_eq!(small.config_for(Target::Reactivity).hidden_sizes, vec![8]);
    }
}
