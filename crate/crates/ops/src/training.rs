//! Parallel per-target training.

use pebble_core::lstm::{train, LstmModel, ModelSet};
use pebble_core::pipeline::{check_converged, prepare, TrainingPlan};
use pebble_core::runin::Retrainer;
use pebble_core::sequence::{OperationSequence, WindowedDataset};
use rayon::prelude::*;

use crate::error::Result;

/// Trains every target of `plan` on the rayon pool. Each target has its
/// own seed, so the result does not depend on scheduling.
pub fn train_parallel(plan: &TrainingPlan, dataset: &WindowedDataset) -> Result<ModelSet> {
    let models: Vec<LstmModel> = plan
        .targets
        .par_iter()
        .map(|t| train(&plan.config_for(*t), dataset, *t))
        .collect::<pebble_core::Result<_>>()?;
    let mut set = ModelSet::default();
    for m in models {
        set.insert(m);
    }
    Ok(set)
}

/// Rebuilds PCA, windows and all models from the accumulated corpus.
#[derive(Debug, Clone)]
pub struct ParallelRetrainer {
    pub plan: TrainingPlan,
    /// Number of completed retrains.
    pub rounds: usize,
}

impl ParallelRetrainer {
    pub fn new(plan: TrainingPlan) -> Self {
        Self { plan, rounds: 0 }
    }
}

impl Retrainer for ParallelRetrainer {
    type Models = ModelSet;

    fn retrain(&mut self, sequences: &[OperationSequence]) -> pebble_core::Result<ModelSet> {
        let (ds, _, _) = prepare(&self.plan, sequences)?;
        let set = train_parallel(&self.plan, &ds).map_err(|e| match e {
            crate::OpsError::Core(c) => c,
            other => pebble_core::Error::InvalidState(other.to_string()),
        })?;
        check_converged(&set.models)?;
        self.rounds += 1;
        Ok(set)
    }
}
