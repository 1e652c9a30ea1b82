//! Randomized piecewise-constant control plans.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{record_plan, OperationSequence, Provenance, StartKind, StartStates, WINDOW};
use crate::error::{invalid_config, invalid_input, Result};
use crate::features::NoisePolicy;
use crate::rng;
use crate::sim::controls::{
    ControlKind, ControlVector, NOMINAL_POWER_KW, ROD_MAX_CM, ROD_PARKED_CM, RUNIN_START_GRAPHITE,
    RUNIN_START_POWER_KW, TIMESTEP_MAX_D,
};
use crate::sim::state::CoreSim;

/// How one control is perturbed at the end of each hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPerturbation {
    pub kind: ControlKind,
    /// Chance the control changes at a hold boundary.
    pub probability: f64,
    /// Chance a change is upward.
    pub up_probability: f64,
    pub step_min: f64,
    pub step_max: f64,
    /// Values are clipped into `[lower, upper]`.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPolicy {
    pub controls: Vec<ControlPerturbation>,
    pub hold_min: usize,
    pub hold_max: usize,
    pub start: StartKind,
    pub seed: u64,
}

fn perturbation(kind: ControlKind, probability: f64, up: f64, step: (f64, f64), range: (f64, f64)) -> ControlPerturbation {
    ControlPerturbation {
        kind,
        probability,
        up_probability: up,
        step_min: step.0,
        step_max: step.1,
        lower: range.0,
        upper: range.1,
    }
}

impl RandomPolicy {
    /// Shipped defaults: every control moves inside the running-in envelope
    /// (power up to nominal, graphite up to the start-up mix, rods between
    /// parked and full depth, timestep within the trim band).
    pub fn default_for(start: StartKind, seed: u64) -> Self {
        let up_power = if start == StartKind::Runin { 0.8 } else { 0.5 };
        let up_graphite = if start == StartKind::Runin { 0.25 } else { 0.5 };
        Self {
            controls: alloc::vec![
                perturbation(ControlKind::Power, 0.5, up_power, (5_000.0, 60_000.0), (RUNIN_START_POWER_KW, NOMINAL_POWER_KW)),
                perturbation(ControlKind::GraphiteFraction, 0.35, up_graphite, (0.02, 0.15), (0.0, RUNIN_START_GRAPHITE)),
                perturbation(ControlKind::RodDepth, 0.4, 0.5, (10.0, 80.0), (ROD_PARKED_CM, ROD_MAX_CM)),
                perturbation(ControlKind::Timestep, 0.2, 0.5, (0.2, 1.5), (3.0, TIMESTEP_MAX_D)),
                perturbation(ControlKind::DiscardThreshold, 0.15, 0.5, (0.3, 1.5), (15.0, 22.0)),
            ],
            hold_min: 3,
            hold_max: 15,
            start,
            seed,
        }
    }

    /// Defaults with every probability redrawn, so each sequence explores a
    /// differently biased part of the operating domain.
    pub fn randomized(start: StartKind, seed: u64) -> Self {
        let mut p = Self::default_for(start, seed);
        let mut r = rng::stream(seed, &[rng::POLICY, 0]);
        for c in p.controls.iter_mut() {
            c.probability = r.random_range(0.05..0.7);
            let bias: f64 = if matches!(c.kind, ControlKind::Power) && start == StartKind::Runin { 0.3 } else { 0.0 };
            c.up_probability = (r.random_range(0.25f64..0.75) + bias).min(0.95);
            if matches!(c.kind, ControlKind::GraphiteFraction) && start == StartKind::Runin {
                c.up_probability = 1.0 - c.up_probability.max(0.55);
            }
        }
        p.hold_min = r.random_range(2..5);
        p.hold_max = p.hold_min + r.random_range(4..16);
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.hold_min == 0 || self.hold_min > self.hold_max {
            return Err(invalid_config!("hold bounds must satisfy 1 <= hold_min <= hold_max"));
        }
        for c in &self.controls {
            let ok = (0.0..=1.0).contains(&c.probability)
                && (0.0..=1.0).contains(&c.up_probability)
                && 0.0 <= c.step_min
                && c.step_min <= c.step_max
                && c.lower <= c.upper;
            if !ok {
                return Err(invalid_config!("bad perturbation settings for `{}`", c.kind.name()));
            }
            let (lo, hi) = c.kind.legal_range();
            if c.upper > hi || c.lower < lo || (c.lower == lo && c.kind == ControlKind::Power) {
                return Err(invalid_config!(
                    "range of `{}` leaves the legal interval ({lo}, {hi}]",
                    c.kind.name()
                ));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant plan starting from `initial` and the hold length of
/// every segment.
pub fn random_plan(policy: &RandomPolicy, initial: &ControlVector, length: usize) -> Result<(Vec<ControlVector>, Vec<usize>)> {
    policy.validate()?;
    let mut r = rng::stream(policy.seed, &[rng::POLICY, 1]);
    let mut current = *initial;
    for c in &policy.controls {
        current.set(c.kind, current.get(c.kind).clamp(c.lower, c.upper));
    }
    let mut plan = Vec::with_capacity(length);
    let mut holds = Vec::new();
    while plan.len() < length {
        let hold = r.random_range(policy.hold_min..=policy.hold_max);
        holds.push(hold);
        for _ in 0..hold.min(length - plan.len()) {
            plan.push(current);
        }
        for c in &policy.controls {
            if r.random::<f64>() >= c.probability {
                continue;
            }
            let step = if c.step_max > c.step_min { r.random_range(c.step_min..=c.step_max) } else { c.step_min };
            let signed = if r.random::<f64>() < c.up_probability { step } else { -step };
            let value = (current.get(c.kind) + signed).clamp(c.lower, c.upper);
            current.set(c.kind, value);
        }
    }
    for c in &plan {
        c.validate()?;
    }
    Ok((plan, holds))
}

/// Draws a plan from `policy`, simulates it and records every step.
pub fn generate_random_sequence(
    sim: &CoreSim,
    starts: &StartStates,
    policy: &RandomPolicy,
    length: usize,
    noise: &NoisePolicy,
) -> Result<OperationSequence> {
    if length < WINDOW {
        return Err(invalid_input!("sequence length {length} is shorter than the window {WINDOW}"));
    }
    let (plan, _) = random_plan(policy, &starts.controls(policy.start), length)?;
    let start = starts.get(policy.start, policy.seed);
    let noise = NoisePolicy { rng_seed: policy.seed, ..noise.clone() };
    let (records, _) = record_plan(sim, &start, &plan, &noise)?;
    Ok(OperationSequence {
        name: format!("random-{}", policy.seed),
        provenance: Provenance::Random,
        seed: policy.seed,
        held_out: false,
        records,
    })
}
