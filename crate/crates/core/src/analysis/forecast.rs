use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Surrogate;
use crate::error::{invalid_input, Error, Result};
use crate::features::{NoisePolicy, FIRST_DEPENDENT, N_FEATURES};
use crate::sequence::{record_plan, StartKind, StartStates, StepRecord, Target};
use crate::sim::{ControlKind, ControlVector, CoreSim};

const PPP: usize = 5;
const DISCARDED: usize = N_FEATURES - 1;

/// Fuel-pebble bookkeeping for forecasts.
///
/// Pebbles move up one axial layer per step, so the graphite leaving the
/// top is the graphite inserted `n_axial` steps earlier. The queue starts
/// with the core's graphite spread evenly over the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuelLedger {
    pub fuel: f64,
    pub graphite_by_layer: VecDeque<f64>,
}

impl FuelLedger {
    /// Starts from a measured feature row: fuel = power / power-per-pebble.
    pub fn from_row(row: &[f64], total_pebbles: f64, n_axial: usize) -> Result<Self> {
        if row.len() != N_FEATURES {
            return Err(Error::DimensionMismatch {
                expected: N_FEATURES,
                got: row.len(),
            });
        }
        if !(row[PPP] > 0.0) || n_axial == 0 {
            return Err(invalid_input!("fuel ledger needs positive power per pebble and layers"));
        }
        let fuel = (row[1] / row[PPP]).min(total_pebbles);
        let per_layer = (total_pebbles - fuel) / n_axial as f64;
        Ok(Self {
            fuel,
            graphite_by_layer: vec![per_layer; n_axial].into(),
        })
    }

    /// Applies one step and returns the new fuel count.
    pub fn advance(&mut self, graphite_fraction: f64, discarded: f64) -> f64 {
        let discarded = discarded.clamp(0.0, self.fuel);
        let graphite_out = self.graphite_by_layer.pop_front().unwrap_or(0.0);
        let vacancies = discarded + graphite_out;
        self.fuel += (1.0 - graphite_fraction) * vacancies - discarded;
        self.graphite_by_layer.push_back(graphite_fraction * vacancies);
        self.fuel
    }
}

/// Autoregressive prediction over a planned control sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrace {
    /// Number of history rows the forecast starts after.
    pub start_step: usize,
    pub horizon: usize,
    pub plan: Vec<ControlVector>,
    pub targets: Vec<Target>,
    /// `[step][target]`: outputs of the window ending at that step.
    pub predictions: Vec<Vec<f64>>,
    /// `[step]` feature rows built for each step.
    pub features: Vec<Vec<f64>>,
    /// Ground-truth reactivity in pcm, when known.
    pub truth_reactivity: Option<Vec<f64>>,
}

impl ForecastTrace {
    pub fn series(&self, target: Target) -> Option<Vec<f64>> {
        let k = self.targets.iter().position(|t| *t == target)?;
        Some(self.predictions.iter().map(|p| p[k]).collect())
    }

    pub fn reactivity(&self) -> Option<Vec<f64>> {
        self.series(Target::Reactivity)
    }
}

/// Rolls the surrogate forward over `plan[..horizon]` from `history`
/// (raw feature rows, oldest first).
///
/// Each new row takes its controls from the plan and its dependent
/// features from the next-step models applied to the previous window;
/// power per pebble comes from the planned power and `ledger`.
pub fn forecast<S: Surrogate + ?Sized>(
    models: &S,
    history: &[[f64; N_FEATURES]],
    plan: &[ControlVector],
    horizon: usize,
    mut ledger: FuelLedger,
) -> Result<ForecastTrace> {
    let window = models.window();
    if horizon == 0 {
        return Err(invalid_input!("horizon must be at least 1"));
    }
    if plan.len() < horizon {
        return Err(invalid_input!("plan has {} steps, horizon {horizon}", plan.len()));
    }
    if history.len() < window {
        return Err(invalid_input!("history has {} rows, need {window}", history.len()));
    }
    for c in &plan[..horizon] {
        c.validate()?;
    }
    let targets = models.targets();
    if !targets.contains(&Target::Reactivity) {
        return Err(Error::ModelsUnavailable("no reactivity model".to_string()));
    }
    if let Some(t) = Target::dependent().into_iter().find(|t| !targets.contains(t)) {
        return Err(Error::ModelsUnavailable(alloc::format!("no model for `{}`", t.name())));
    }
    let predict_all = |rows: &VecDeque<[f64; N_FEATURES]>| -> Result<Vec<f64>> {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        targets.iter().map(|t| models.predict(*t, &flat)).collect()
    };
    let next_feature = |preds: &[f64], j: usize| -> f64 {
        let k = targets
            .iter()
            .position(|t| *t == Target::NextFeature(j))
            .expect("dependent models checked");
        preds[k]
    };

    let mut rows: VecDeque<[f64; N_FEATURES]> = history[history.len() - window..].iter().copied().collect();
    let mut preds = predict_all(&rows)?;
    let mut predictions = Vec::with_capacity(horizon);
    let mut features = Vec::with_capacity(horizon);
    for controls in &plan[..horizon] {
        let mut row = [0.0; N_FEATURES];
        row[..FIRST_DEPENDENT].copy_from_slice(&controls.as_array());
        for (j, slot) in row.iter_mut().enumerate().skip(FIRST_DEPENDENT) {
            *slot = next_feature(&preds, j).max(0.0);
        }
        let fuel = ledger.advance(controls.graphite_fraction, row[DISCARDED]);
        row[PPP] = if fuel > 0.0 { controls.power / fuel } else { 0.0 };
        rows.pop_front();
        rows.push_back(row);
        preds = predict_all(&rows)?;
        features.push(row.to_vec());
        predictions.push(preds.clone());
    }
    Ok(ForecastTrace {
        start_step: history.len(),
        horizon,
        plan: plan[..horizon].to_vec(),
        targets,
        predictions,
        features,
        truth_reactivity: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlChange {
    pub control: ControlKind,
    pub value: f64,
}

/// A step change in one or more controls after a steady history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub start: StartKind,
    /// Controls held over the history.
    pub base: ControlVector,
    pub history_steps: usize,
    pub horizon: usize,
    /// Applied from the first forecast step on.
    pub changes: Vec<ControlChange>,
}

impl Scenario {
    pub fn future_controls(&self) -> ControlVector {
        self.changes.iter().fold(self.base, |c, ch| c.with(ch.control, ch.value))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.history_steps == 0 {
            return Err(invalid_input!("scenario `{}` needs positive history and horizon", self.name));
        }
        self.base.validate()?;
        self.future_controls().validate()
    }
}

/// Power down, power up, rods in and threshold decrease from full-power
/// equilibrium, each forecast over 20 steps after a 20-step history.
pub fn scenario_suite() -> Vec<Scenario> {
    let eq = ControlVector::benchmark();
    let p = eq.power;
    let make = |name: &str, base: ControlVector, kind: ControlKind, value: f64| Scenario {
        name: name.to_string(),
        start: StartKind::Equilibrium,
        base,
        history_steps: 20,
        horizon: 20,
        changes: vec![ControlChange { control: kind, value }],
    };
    vec![
        make("power-down", eq, ControlKind::Power, 0.75 * p),
        make("power-up", eq.with(ControlKind::Power, 0.75 * p), ControlKind::Power, p),
        make("rods-in", eq.with(ControlKind::RodDepth, 300.0), ControlKind::RodDepth, eq.rod_depth),
        make(
            "threshold-decrease",
            eq,
            ControlKind::DiscardThreshold,
            0.9 * eq.discard_threshold,
        ),
    ]
}

/// Simulated history and future of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub scenario: Scenario,
    pub history: Vec<StepRecord>,
    pub future: Vec<StepRecord>,
    pub total_pebbles: f64,
    pub n_axial: usize,
}

pub fn simulate_scenario(
    sim: &CoreSim,
    starts: &StartStates,
    scenario: &Scenario,
    seed: u64,
    noise: &NoisePolicy,
) -> Result<ScenarioTruth> {
    scenario.validate()?;
    let mut plan = vec![scenario.base; scenario.history_steps];
    plan.extend(core::iter::repeat_n(scenario.future_controls(), scenario.horizon));
    let policy = NoisePolicy { rng_seed: seed, ..noise.clone() };
    let (mut records, _) = record_plan(sim, &starts.get(scenario.start, seed), &plan, &policy)?;
    let future = records.split_off(scenario.history_steps);
    Ok(ScenarioTruth {
        scenario: scenario.clone(),
        history: records,
        future,
        total_pebbles: sim.config().grid.total_pebbles as f64,
        n_axial: sim.grid().n_axial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub trace: ForecastTrace,
    /// |predicted − realized| reactivity per forecast step, pcm.
    pub abs_error: Vec<f64>,
}

pub fn evaluate_scenario<S: Surrogate + ?Sized>(models: &S, truth: &ScenarioTruth) -> Result<ScenarioOutcome> {
    let history: Vec<[f64; N_FEATURES]> = truth.history.iter().map(|r| r.features.to_array()).collect();
    let last = history.last().ok_or_else(|| invalid_input!("empty scenario history"))?;
    let ledger = FuelLedger::from_row(last, truth.total_pebbles, truth.n_axial)?;
    let plan: Vec<ControlVector> = truth.future.iter().map(|r| *r.controls()).collect();
    let mut trace = forecast(models, &history, &plan, plan.len(), ledger)?;
    let realized: Vec<f64> = truth.future.iter().map(|r| r.reactivity * 1e5).collect();
    let predicted = trace.reactivity().expect("reactivity model checked");
    let abs_error = predicted.iter().zip(&realized).map(|(p, r)| (p - r).abs()).collect();
    trace.truth_reactivity = Some(realized);
    Ok(ScenarioOutcome {
        name: truth.scenario.name.clone(),
        trace,
        abs_error,
    })
}

/// Mean absolute error over forecast steps `1..=split` and
/// `split+1..=2*split`, each averaged across scenarios.
pub fn window_degradation(outcomes: &[ScenarioOutcome], split: usize) -> Result<(f64, f64)> {
    if outcomes.is_empty() || split == 0 {
        return Err(invalid_input!("need scenarios and a positive split"));
    }
    let mut early = 0.0;
    let mut late = 0.0;
    for o in outcomes {
        if o.abs_error.len() < 2 * split {
            return Err(invalid_input!("scenario `{}` is shorter than {} steps", o.name, 2 * split));
        }
        early += o.abs_error[..split].iter().sum::<f64>() / split as f64;
        late += o.abs_error[split..2 * split].iter().sum::<f64>() / split as f64;
    }
    let n = outcomes.len() as f64;
    Ok((early / n, late / n))
}
