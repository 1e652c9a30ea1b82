//! Operation sequences: recording, random and handcrafted plans, windowed
//! training data.

pub mod dataset;
pub mod library;
pub mod policy;
pub mod targets;

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::features::{apply_noise, FeatureVector, NoisePolicy};
use crate::sim::controls::ControlVector;
use crate::sim::state::{CoreSim, CoreState, StepResult};

pub use dataset::{window_dataset, window_sequence, SampleOrigin, Split, Standardizer, WindowedDataset};
pub use library::{handcrafted_library, SequenceTemplate};
pub use policy::{generate_random_sequence, random_plan, ControlPerturbation, RandomPolicy};
pub use targets::{MeshPcas, Target, N_MESH_COMPONENTS, N_TARGETS};

/// Default window length.
pub const WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Handcrafted,
    Random,
    Runin,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Handcrafted => "handcrafted",
            Provenance::Random => "random",
            Provenance::Runin => "runin",
        }
    }
}

/// Which state a sequence starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartKind {
    /// Fresh core at the running-in mix, rods parked, 10 kW.
    Runin,
    /// Full-power equilibrium.
    Equilibrium,
}

/// Recorded observables of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u64,
    pub elapsed_days: f64,
    /// Measured features; `features.controls` are the controls of the step.
    pub features: FeatureVector,
    pub k_eff: f64,
    pub reactivity: f64,
    pub power_mesh: Vec<f64>,
    pub flux_mesh: Vec<f64>,
}

impl StepRecord {
    pub fn controls(&self) -> &ControlVector {
        &self.features.controls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationSequence {
    pub name: String,
    pub provenance: Provenance,
    pub seed: u64,
    /// Excluded from every training split.
    pub held_out: bool,
    pub records: Vec<StepRecord>,
}

impl OperationSequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn controls(&self) -> Vec<ControlVector> {
        self.records.iter().map(|r| *r.controls()).collect()
    }
}

/// Turns kernel step results into records, carrying noise-free features
/// forward between steps and adding measurement noise per step.
#[derive(Debug, Clone)]
pub struct Recorder {
    noise: NoisePolicy,
    previous_clean: Option<FeatureVector>,
}

impl Recorder {
    pub fn new(noise: NoisePolicy) -> Self {
        Self {
            noise,
            previous_clean: None,
        }
    }

    /// Starts with the given noise-free history so carry-forward values
    /// continue smoothly.
    pub fn with_history(noise: NoisePolicy, previous_clean: Option<FeatureVector>) -> Self {
        Self { noise, previous_clean }
    }

    pub fn last_clean(&self) -> Option<&FeatureVector> {
        self.previous_clean.as_ref()
    }

    pub fn record(&mut self, controls: &ControlVector, result: &StepResult) -> Result<StepRecord> {
        let clean = FeatureVector::from_step(
            controls,
            result.state_after.fuel_count(),
            &result.discharge,
            self.previous_clean.as_ref(),
        )?;
        let step_index = result.state_after.step_index;
        let measured = apply_noise(&clean, &self.noise, step_index);
        self.previous_clean = Some(clean);
        Ok(StepRecord {
            step_index,
            elapsed_days: result.state_after.elapsed_days,
            features: measured,
            k_eff: result.k_eff,
            reactivity: result.reactivity,
            power_mesh: result.mesh.power.clone(),
            flux_mesh: result.mesh.flux.clone(),
        })
    }
}

/// Simulates `plan` from `start` and records every step. Returns the records
/// and the final state.
pub fn record_plan(
    sim: &CoreSim,
    start: &CoreState,
    plan: &[ControlVector],
    noise: &NoisePolicy,
) -> Result<(Vec<StepRecord>, CoreState)> {
    if plan.is_empty() {
        return Err(invalid_input!("empty plan"));
    }
    let mut recorder = Recorder::new(noise.clone());
    let mut state = start.clone();
    let mut records = Vec::with_capacity(plan.len());
    for controls in plan {
        let r = sim.advance_step(&state, controls)?;
        records.push(recorder.record(controls, &r)?);
        state = r.state_after;
    }
    Ok((records, state))
}

/// Start states shared by all generated sequences.
#[derive(Debug, Clone)]
pub struct StartStates {
    pub runin: CoreState,
    pub equilibrium: CoreState,
}

impl StartStates {
    /// Equilibrium is reached with `equilibrium_steps` noise-free benchmark
    /// steps from a staggered core.
    pub fn build(sim: &CoreSim, equilibrium_steps: usize) -> Result<Self> {
        Ok(Self {
            runin: sim.fresh_state(&ControlVector::runin_start(), 0)?,
            equilibrium: sim.equilibrium_state(&ControlVector::benchmark(), equilibrium_steps, 0)?,
        })
    }

    /// Start state reseeded for one sequence.
    pub fn get(&self, kind: StartKind, seed: u64) -> CoreState {
        let mut s = match kind {
            StartKind::Runin => self.runin.clone(),
            StartKind::Equilibrium => self.equilibrium.clone(),
        };
        s.rng_seed = seed;
        s
    }

    pub fn controls(&self, kind: StartKind) -> ControlVector {
        match kind {
            StartKind::Runin => ControlVector::runin_start(),
            StartKind::Equilibrium => ControlVector::benchmark(),
        }
    }
}

/// Simulates a handcrafted template.
pub fn simulate_template(
    sim: &CoreSim,
    starts: &StartStates,
    template: &SequenceTemplate,
    seed: u64,
    noise: &NoisePolicy,
) -> Result<OperationSequence> {
    let start = starts.get(template.start, seed);
    let policy = NoisePolicy { rng_seed: seed, ..noise.clone() };
    let (records, _) = record_plan(sim, &start, &template.plan, &policy)?;
    Ok(OperationSequence {
        name: template.name.clone(),
        provenance: Provenance::Handcrafted,
        seed,
        held_out: template.held_out,
        records,
    })
}
