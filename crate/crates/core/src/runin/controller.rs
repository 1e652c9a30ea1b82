use alloc::collections::VecDeque;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{GoalControl, GoalSchedule, GridPoint};
use crate::analysis::{FuelLedger, Surrogate};
use crate::error::{invalid_input, Result};
use crate::features::{FIRST_DEPENDENT, N_FEATURES};
use crate::sequence::{StepRecord, Target};
use crate::sim::{compute_reactivity, ControlVector, CoreSim, CoreState};

/// Predicts the reactivity (pcm) the next step would have under candidate
/// controls.
pub trait ReactivityPredictor {
    /// Recorded steps needed before the first prediction.
    fn history_needed(&self) -> usize;

    /// Called once per step before any query. `state` is the simulator
    /// state the next step starts from; model-based predictors ignore it.
    fn begin_step(&mut self, history: &[StepRecord], state: &CoreState) -> Result<()>;

    fn predict(&mut self, candidate: &ControlVector) -> Result<f64>;
}

/// Reads the answer from a noise-free copy of the simulator.
#[derive(Debug, Clone)]
pub struct PerfectOracle {
    sim: CoreSim,
    state: Option<CoreState>,
}

impl PerfectOracle {
    pub fn new(sim: &CoreSim) -> Self {
        Self {
            sim: sim.clone().with_noise(false),
            state: None,
        }
    }
}

impl ReactivityPredictor for PerfectOracle {
    fn history_needed(&self) -> usize {
        0
    }

    fn begin_step(&mut self, _: &[StepRecord], state: &CoreState) -> Result<()> {
        self.state = Some(state.clone());
        Ok(())
    }

    fn predict(&mut self, candidate: &ControlVector) -> Result<f64> {
        let state = self.state.as_ref().ok_or_else(|| invalid_input!("begin_step was not called"))?;
        let r = self.sim.advance_step(state, candidate)?;
        Ok(compute_reactivity(r.k_eff)? * 1e5)
    }
}

/// Uses trained surrogates: the candidate row takes its dependent features
/// from the next-step models and its power per pebble from a fuel ledger.
pub struct SurrogatePredictor<'a, S: Surrogate + ?Sized> {
    models: &'a S,
    total_pebbles: f64,
    n_axial: usize,
    rows: VecDeque<[f64; N_FEATURES]>,
    dependent: [f64; N_FEATURES],
    ledger: Option<FuelLedger>,
    bias_correction: bool,
    bias: f64,
}

impl<'a, S: Surrogate + ?Sized> SurrogatePredictor<'a, S> {
    pub fn new(models: &'a S, total_pebbles: f64, n_axial: usize) -> Result<Self> {
        if !models.supports(Target::Reactivity) {
            return Err(crate::Error::ModelsUnavailable("no reactivity model".into()));
        }
        if let Some(t) = Target::dependent().into_iter().find(|t| !models.supports(*t)) {
            return Err(crate::Error::ModelsUnavailable(alloc::format!("no model for `{}`", t.name())));
        }
        Ok(Self {
            models,
            total_pebbles,
            n_axial,
            rows: VecDeque::new(),
            dependent: [0.0; N_FEATURES],
            ledger: None,
            bias_correction: false,
            bias: 0.0,
        })
    }

    /// Adds the last step's realized minus predicted reactivity to every
    /// prediction, so a slowly varying model error does not steer the
    /// controller.
    pub fn with_bias_correction(mut self, on: bool) -> Self {
        self.bias_correction = on;
        self
    }

    /// Offset currently added to predictions, pcm.
    pub fn bias(&self) -> f64 {
        self.bias
    }
}

impl<S: Surrogate + ?Sized> ReactivityPredictor for SurrogatePredictor<'_, S> {
    fn history_needed(&self) -> usize {
        self.models.window()
    }

    fn begin_step(&mut self, history: &[StepRecord], _: &CoreState) -> Result<()> {
        let w = self.models.window();
        if history.len() < w {
            return Err(invalid_input!("history has {} steps, need {w}", history.len()));
        }
        self.rows = history[history.len() - w..].iter().map(|r| r.features.to_array()).collect();
        let flat: Vec<f64> = self.rows.iter().flatten().copied().collect();
        for j in FIRST_DEPENDENT..N_FEATURES {
            self.dependent[j] = self.models.predict(Target::NextFeature(j), &flat)?.max(0.0);
        }
        let last = self.rows.back().expect("window is non-empty");
        self.ledger = Some(FuelLedger::from_row(last, self.total_pebbles, self.n_axial)?);
        if self.bias_correction {
            let realized = history[history.len() - 1].reactivity * 1e5;
            self.bias = realized - self.models.predict(Target::Reactivity, &flat)?;
        }
        Ok(())
    }

    fn predict(&mut self, candidate: &ControlVector) -> Result<f64> {
        let mut ledger = self.ledger.clone().ok_or_else(|| invalid_input!("begin_step was not called"))?;
        let mut row = self.dependent;
        row[..FIRST_DEPENDENT].copy_from_slice(&candidate.as_array());
        let fuel = ledger.advance(candidate.graphite_fraction, row[N_FEATURES - 1]);
        row[FIRST_DEPENDENT] = if fuel > 0.0 { candidate.power / fuel } else { 0.0 };
        let mut flat: Vec<f64> = self.rows.iter().skip(1).flatten().copied().collect();
        flat.extend_from_slice(&row);
        Ok(self.models.predict(Target::Reactivity, &flat)? + self.bias)
    }
}

/// Outcome of one control decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlChoice {
    pub point: GridPoint,
    pub controls: ControlVector,
    pub predicted_pcm: f64,
    pub queries: usize,
    /// Predicted |rho| <= tolerance.
    pub within_tolerance: bool,
    /// Predicted pcm per index for each goal control that could move.
    pub slopes: Vec<(GoalControl, f64)>,
}

struct Search<'a, P: ReactivityPredictor + ?Sized> {
    predictor: &'a mut P,
    schedule: &'a GoalSchedule,
    queries: usize,
    cache: Vec<(GridPoint, f64)>,
    best: Option<(GridPoint, f64)>,
}

impl<P: ReactivityPredictor + ?Sized> Search<'_, P> {
    fn has_budget(&self) -> bool {
        self.queries < self.schedule.query_budget
    }

    fn eval(&mut self, p: GridPoint) -> Result<f64> {
        if let Some(&(_, v)) = self.cache.iter().find(|(q, _)| *q == p) {
            return Ok(v);
        }
        let rho = self.predictor.predict(&self.schedule.controls(&p))?;
        self.queries += 1;
        self.cache.push((p, rho));
        Ok(rho)
    }

    /// Records `p` as a candidate answer; only points meeting the minimum
    /// advance are offered.
    fn offer(&mut self, p: GridPoint, rho: f64) {
        if self.best.is_none_or(|(_, b)| rho.abs() < b.abs()) {
            self.best = Some((p, rho));
        }
    }

    /// Moves along one lever from `base` (value `rho`) over `1..=span`
    /// indices and bisects for the zero crossing, assuming monotone
    /// response. Returns the best point found.
    fn bisect(
        &mut self,
        base: GridPoint,
        rho: f64,
        span: usize,
        shift: impl Fn(GridPoint, usize) -> GridPoint,
    ) -> Result<(GridPoint, f64)> {
        let tol = self.schedule.tolerance_pcm;
        let (mut lo, mut hi) = (0usize, span);
        let mut best = (base, rho);
        while hi > lo && self.has_budget() {
            let mid = if hi - lo == 1 { hi } else { lo + (hi - lo).div_ceil(2) };
            let p = shift(base, mid);
            let v = self.eval(p)?;
            if v.abs() < best.1.abs() {
                best = (p, v);
            }
            if v.abs() <= tol {
                break;
            }
            if v.signum() == rho.signum() {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Ok(best)
    }
}

/// Picks the next grid point: at least `min_perturbations` index advances
/// toward the current goal (fewer only when less remains), preferring
/// controls predicted to pull reactivity toward zero, then fine-tuned by
/// bisection on the largest levers and finally on the timestep trim.
pub fn choose_controls<P: ReactivityPredictor + ?Sized>(
    predictor: &mut P,
    schedule: &GoalSchedule,
    at: &GridPoint,
) -> Result<ControlChoice> {
    let goal = schedule.current_goal(at);
    let tol = schedule.tolerance_pcm;
    let mut search = Search {
        predictor,
        schedule,
        queries: 0,
        cache: Vec::new(),
        best: None,
    };
    let remaining = |p: &GridPoint, c: GoalControl| c.index(&goal).saturating_sub(c.index(p));
    let total_remaining: usize = GoalControl::ALL.iter().map(|c| remaining(at, *c)).sum();
    let rho0 = search.eval(*at)?;
    if total_remaining == 0 && rho0.abs() <= tol {
        return Ok(ControlChoice {
            point: *at,
            controls: schedule.controls(at),
            predicted_pcm: rho0,
            queries: search.queries,
            within_tolerance: true,
            slopes: Vec::new(),
        });
    }

    // Sign probes, one stride of up to s indices per movable control.
    let stride = schedule.min_perturbations;
    let mut slopes = Vec::new();
    for c in GoalControl::ALL {
        let r = remaining(at, c);
        if r == 0 || !search.has_budget() {
            continue;
        }
        let k = r.min(stride);
        let mut p = *at;
        *c.index_mut(&mut p) += k;
        let v = search.eval(p)?;
        slopes.push((c, (v - rho0) / k as f64));
    }

    // Allocate the minimum advance: helpful controls by precedence, then
    // the least harmful ones.
    let pulls = |slope: f64| slope * rho0 < 0.0;
    let mut order: Vec<(GoalControl, f64)> = slopes.clone();
    order.sort_by(|a, b| {
        let rank = |s: &(GoalControl, f64)| -> (u8, f64, usize) {
            let prec = GoalControl::ALL.iter().position(|c| *c == s.0).unwrap_or(0);
            if pulls(s.1) {
                (0, 0.0, prec)
            } else {
                (1, s.1.abs(), prec)
            }
        };
        let (ra, rb) = (rank(a), rank(b));
        ra.0.cmp(&rb.0).then(ra.1.total_cmp(&rb.1)).then(ra.2.cmp(&rb.2))
    });
    let mut need = stride.min(total_remaining);
    let mut cand = *at;
    for (c, _) in &order {
        let k = remaining(&cand, *c).min(need);
        *c.index_mut(&mut cand) += k;
        need -= k;
    }
    let mut rho = search.eval(cand)?;
    search.offer(cand, rho);

    // Fine-tune. The timestep trim is the only reversible lever, so it
    // goes first; goal controls whose slope opposes rho follow, largest
    // |slope| first, and a final trim pass absorbs any overshoot.
    (cand, rho) = trim(&mut search, at, cand, rho)?;
    let mut levers = slopes.clone();
    levers.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    for (c, slope) in levers {
        if rho.abs() <= tol || !search.has_budget() {
            break;
        }
        let span = remaining(&cand, c);
        if span == 0 || slope * rho >= 0.0 {
            continue;
        }
        let (p, v) = search.bisect(cand, rho, span, |mut p, k| {
            *c.index_mut(&mut p) += k;
            p
        })?;
        search.offer(p, v);
        (cand, rho) = (p, v);
    }
    trim(&mut search, at, cand, rho)?;

    let (point, predicted) = search.best.expect("at least one candidate offered");
    Ok(ControlChoice {
        point,
        controls: schedule.controls(&point),
        predicted_pcm: predicted,
        queries: search.queries,
        within_tolerance: predicted.abs() <= tol,
        slopes,
    })
}

/// Bisects the timestep trim toward zero predicted reactivity: longer
/// steps when `rho` is positive, shorter when negative.
fn trim<P: ReactivityPredictor + ?Sized>(
    search: &mut Search<'_, P>,
    at: &GridPoint,
    cand: GridPoint,
    rho: f64,
) -> Result<(GridPoint, f64)> {
    if rho.abs() <= search.schedule.tolerance_pcm || !search.has_budget() {
        return Ok((cand, rho));
    }
    let (lo, hi) = search.schedule.trim_bounds(at);
    let up = rho > 0.0;
    let span = if up {
        (hi - cand.timestep).max(0)
    } else {
        (cand.timestep - lo).max(0)
    } as usize;
    if span == 0 {
        return Ok((cand, rho));
    }
    let (p, v) = search.bisect(cand, rho, span, |mut p, k| {
        p.timestep += if up { k as i32 } else { -(k as i32) };
        p
    })?;
    search.offer(p, v);
    Ok((p, v))
}
