use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{choose_controls, GoalSchedule, GridPoint, ReactivityPredictor, SurrogatePredictor};
use crate::analysis::Surrogate;
use crate::error::{invalid_input, Result};
use crate::features::NoisePolicy;
use crate::rng;
use crate::sequence::{OperationSequence, Provenance, Recorder, StepRecord};
use crate::sim::{CoreSim, CoreState};

/// One controller step with its predicted and realized reactivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInStep {
    pub step_index: u64,
    /// Days since the run-in started.
    pub elapsed_days: f64,
    pub grid: GridPoint,
    pub controls: crate::sim::ControlVector,
    pub predicted_pcm: f64,
    pub realized_pcm: f64,
    pub queries: usize,
    /// The controller could not find a move predicted within tolerance.
    pub tolerance_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInRecord {
    pub iteration: usize,
    pub min_perturbations: usize,
    /// Prelude steps run before the controller took over.
    pub warmup_steps: usize,
    pub steps: Vec<RunInStep>,
    pub goals_reached: bool,
    /// Days from the start until power first reaches its goal.
    pub days_to_full_power: Option<f64>,
    /// Mean |predicted - realized| reactivity over controller steps, pcm.
    pub reactivity_mae: Option<f64>,
    /// Set when the safety envelope stopped the run.
    pub aborted: Option<String>,
    /// Set when retraining after this iteration failed and the previous
    /// models were kept.
    pub retrain_failed: Option<String>,
}

impl RunInRecord {
    /// Fraction of controller steps with |realized| <= `limit_pcm`.
    pub fn fraction_within(&self, limit_pcm: f64) -> f64 {
        if self.steps.is_empty() {
            return 1.0;
        }
        self.steps.iter().filter(|s| s.realized_pcm.abs() <= limit_pcm).count() as f64 / self.steps.len() as f64
    }
}

/// A finished iteration: record, recorded sequence and final state.
#[derive(Debug, Clone)]
pub struct RunInOutcome {
    pub record: RunInRecord,
    pub sequence: OperationSequence,
    pub final_state: CoreState,
}

/// Per-iteration settings shared by [`run_iteration`] and
/// [`optimize_loop`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSettings {
    /// Controller steps, excluding the prelude.
    pub max_steps: usize,
    pub noise: NoisePolicy,
    /// Grid points stepped through before the controller takes over, until
    /// the predictor has the history it needs. The last point is held if
    /// the prelude is shorter than that.
    #[serde(default)]
    pub prelude: Vec<GridPoint>,
    /// Surrogate predictions are offset by the last step's error; see
    /// [`SurrogatePredictor::with_bias_correction`].
    #[serde(default)]
    pub bias_correction: bool,
}

impl IterationSettings {
    pub fn new(max_steps: usize, noise: NoisePolicy) -> Self {
        Self {
            max_steps,
            noise,
            prelude: Vec::new(),
            bias_correction: false,
        }
    }

    pub fn with_prelude(mut self, prelude: Vec<GridPoint>) -> Self {
        self.prelude = prelude;
        self
    }

    fn validate(&self, schedule: &GoalSchedule) -> Result<()> {
        let mut prev = GridPoint::default();
        for (i, p) in self.prelude.iter().enumerate() {
            let monotone = p.power >= prev.power && p.graphite >= prev.graphite && p.rod >= prev.rod;
            let on_grid = p.power <= schedule.power.points
                && p.graphite <= schedule.graphite.points
                && p.rod <= schedule.rod.points
                && (schedule.timestep.min_index..=schedule.timestep.max_index).contains(&p.timestep);
            if !monotone || !on_grid {
                return Err(invalid_input!("prelude point {i} ({p:?}) is off the grid or moves away from the goals"));
            }
            prev = *p;
        }
        Ok(())
    }
}

/// Drives the simulator from `start` toward the goals. Realized
/// reactivities always come from `sim`; the predictor only chooses
/// controls.
pub fn run_iteration<P: ReactivityPredictor + ?Sized>(
    sim: &CoreSim,
    start: &CoreState,
    predictor: &mut P,
    schedule: &GoalSchedule,
    settings: &IterationSettings,
    iteration: usize,
) -> Result<RunInOutcome> {
    schedule.validate()?;
    settings.validate(schedule)?;
    let (max_steps, noise) = (settings.max_steps, &settings.noise);
    let mut point = GridPoint::default();
    let mut record = RunInRecord {
        iteration,
        min_perturbations: schedule.min_perturbations,
        warmup_steps: 0,
        steps: Vec::new(),
        goals_reached: schedule.goals_reached(&point),
        days_to_full_power: None,
        reactivity_mae: None,
        aborted: None,
        retrain_failed: None,
    };
    let mut sequence = OperationSequence {
        name: format!("runin-iteration-{iteration}"),
        provenance: Provenance::Runin,
        seed: noise.rng_seed,
        held_out: false,
        records: Vec::new(),
    };
    let mut state = start.clone();
    if record.goals_reached {
        return Ok(RunInOutcome {
            record,
            sequence,
            final_state: state,
        });
    }
    let t0 = state.elapsed_days;
    let mut recorder = Recorder::new(noise.clone());
    let envelope = schedule.safety_envelope_pcm;
    let mut history: Vec<StepRecord> = Vec::new();

    while history.len() < predictor.history_needed() {
        point = settings.prelude.get(history.len()).copied().unwrap_or(point);
        let warmup = schedule.controls(&point);
        let r = sim.advance_step(&state, &warmup)?;
        let rec = recorder.record(&warmup, &r)?;
        state = r.state_after;
        let rho = rec.reactivity * 1e5;
        history.push(rec);
        record.warmup_steps += 1;
        if rho.abs() > envelope {
            record.aborted = Some(format!("prelude reactivity {rho:.0} pcm outside +-{envelope} pcm"));
            break;
        }
    }

    while record.aborted.is_none() && record.steps.len() < max_steps && !schedule.goals_reached(&point) {
        predictor.begin_step(&history, &state)?;
        let choice = choose_controls(predictor, schedule, &point)?;
        let r = sim.advance_step(&state, &choice.controls)?;
        let rec = recorder.record(&choice.controls, &r)?;
        state = r.state_after;
        point = choice.point;
        let realized = rec.reactivity * 1e5;
        record.steps.push(RunInStep {
            step_index: rec.step_index,
            elapsed_days: state.elapsed_days - t0,
            grid: point,
            controls: choice.controls,
            predicted_pcm: choice.predicted_pcm,
            realized_pcm: realized,
            queries: choice.queries,
            tolerance_violation: !choice.within_tolerance,
        });
        history.push(rec);
        if record.days_to_full_power.is_none() && point.power >= schedule.power.points {
            record.days_to_full_power = Some(state.elapsed_days - t0);
        }
        if realized.abs() > envelope {
            record.aborted = Some(format!(
                "step {} realized reactivity {realized:.0} pcm outside +-{envelope} pcm",
                record.steps.len()
            ));
        }
    }
    record.goals_reached = schedule.goals_reached(&point);
    if !record.steps.is_empty() {
        let n = record.steps.len() as f64;
        record.reactivity_mae = Some(record.steps.iter().map(|s| (s.predicted_pcm - s.realized_pcm).abs()).sum::<f64>() / n);
    }
    sequence.records = history;
    Ok(RunInOutcome {
        record,
        sequence,
        final_state: state,
    })
}

/// Rebuilds surrogates from an accumulated corpus.
pub trait Retrainer {
    type Models: Surrogate;
    fn retrain(&mut self, sequences: &[OperationSequence]) -> Result<Self::Models>;
}

/// Grid points a perfect oracle chooses over its first `steps` steps, for
/// use as an operator-led prelude.
pub fn oracle_prelude(
    sim: &CoreSim,
    start: &CoreState,
    schedule: &GoalSchedule,
    steps: usize,
    noise: &NoisePolicy,
) -> Result<Vec<GridPoint>> {
    let mut oracle = super::PerfectOracle::new(sim);
    let settings = IterationSettings::new(steps, noise.clone());
    let out = run_iteration(sim, start, &mut oracle, schedule, &settings, 0)?;
    if let Some(reason) = out.record.aborted {
        return Err(crate::Error::InvalidState(reason));
    }
    Ok(out.record.steps.iter().map(|s| s.grid).collect())
}

#[derive(Debug, Clone)]
pub struct LoopReport<M> {
    pub records: Vec<RunInRecord>,
    pub models: M,
}

/// Runs `n_iterations` run-ins, appending each recorded sequence to
/// `dataset` and retraining after each. `s_values` cycles over iterations.
#[allow(clippy::too_many_arguments)]
pub fn optimize_loop<R: Retrainer>(
    sim: &CoreSim,
    start: &CoreState,
    initial: R::Models,
    dataset: &mut Vec<OperationSequence>,
    schedule: &GoalSchedule,
    settings: &IterationSettings,
    n_iterations: usize,
    s_values: &[usize],
    retrainer: &mut R,
) -> Result<LoopReport<R::Models>> {
    if n_iterations == 0 || s_values.is_empty() {
        return Err(invalid_input!("need at least one iteration and one s value"));
    }
    let mut models = initial;
    let mut records = Vec::with_capacity(n_iterations);
    let total = sim.config().grid.total_pebbles as f64;
    let n_axial = sim.grid().n_axial;
    for it in 0..n_iterations {
        let mut sched = schedule.clone();
        sched.min_perturbations = s_values[it % s_values.len()];
        let mut iter_settings = settings.clone();
        iter_settings.noise.rng_seed = rng::derive_seed(settings.noise.rng_seed, &[rng::POLICY, it as u64]);
        let mut start_state = start.clone();
        start_state.rng_seed = iter_settings.noise.rng_seed;
        let outcome = {
            let mut predictor =
                SurrogatePredictor::new(&models, total, n_axial)?.with_bias_correction(settings.bias_correction);
            run_iteration(sim, &start_state, &mut predictor, &sched, &iter_settings, it)?
        };
        let mut record = outcome.record;
        dataset.push(outcome.sequence);
        match retrainer.retrain(dataset) {
            Ok(m) => models = m,
            Err(e) => record.retrain_failed = Some(format!("{e}")),
        }
        records.push(record);
    }
    Ok(LoopReport { records, models })
}
