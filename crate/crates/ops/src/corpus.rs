//! Training-corpus generation: handcrafted templates, random policies and
//! oracle-guided run-ins.

use pebble_core::features::NoisePolicy;
use pebble_core::rng;
use pebble_core::runin::{run_iteration, GoalSchedule, IterationSettings, PerfectOracle};
use pebble_core::sequence::{
    generate_random_sequence, handcrafted_library, simulate_template, OperationSequence, RandomPolicy, StartKind,
    StartStates,
};
use pebble_core::sim::CoreSim;
use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};

/// Minimum-perturbation settings cycled over guided run-ins, so the corpus
/// covers both slow and fast start-ups.
pub const GUIDED_S_VALUES: [usize; 4] = [10, 20, 30, 15];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Taken from the front of the handcrafted library.
    pub handcrafted: usize,
    pub random: usize,
    pub random_length: usize,
    /// Run-ins driven by a perfect oracle; they show the surrogate the
    /// near-critical states a real run-in passes through.
    pub guided: usize,
    pub guided_max_steps: usize,
    pub seed: u64,
    pub noise: NoisePolicy,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            handcrafted: 14,
            random: 19,
            random_length: 200,
            guided: 2,
            guided_max_steps: 400,
            seed: 0,
            noise: NoisePolicy::default(),
        }
    }
}

impl CorpusSpec {
    fn sub_seed(&self, group: u64, i: usize) -> u64 {
        rng::derive_seed(self.seed, &[group, i as u64])
    }
}

pub fn build_corpus(sim: &CoreSim, starts: &StartStates, spec: &CorpusSpec) -> Result<Vec<OperationSequence>> {
    let library = handcrafted_library();
    if spec.handcrafted > library.len() {
        return Err(OpsError::Invalid(format!(
            "the handcrafted library has {} templates, {} requested",
            library.len(),
            spec.handcrafted
        )));
    }
    let mut out = Vec::with_capacity(spec.handcrafted + spec.random + spec.guided);
    for (i, t) in library.iter().take(spec.handcrafted).enumerate() {
        out.push(simulate_template(sim, starts, t, spec.sub_seed(1, i), &spec.noise)?);
    }
    for i in 0..spec.random {
        let start = if i % 2 == 0 { StartKind::Runin } else { StartKind::Equilibrium };
        let policy = RandomPolicy::randomized(start, spec.sub_seed(2, i));
        let mut seq = generate_random_sequence(sim, starts, &policy, spec.random_length, &spec.noise)?;
        seq.name = format!("random-{i:02}");
        out.push(seq);
    }
    for i in 0..spec.guided {
        let seed = spec.sub_seed(3, i);
        let schedule = GoalSchedule::reference(GUIDED_S_VALUES[i % GUIDED_S_VALUES.len()]);
        let settings = IterationSettings::new(spec.guided_max_steps, NoisePolicy { rng_seed: seed, ..spec.noise.clone() });
        let mut oracle = PerfectOracle::new(sim);
        let outcome = run_iteration(sim, &starts.get(StartKind::Runin, seed), &mut oracle, &schedule, &settings, 0)?;
        let mut seq = outcome.sequence;
        seq.name = format!("guided-{i:02}");
        out.push(seq);
    }
    Ok(out)
}
