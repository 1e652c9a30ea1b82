//! Closed-loop running-in control guided by a reactivity predictor.

mod controller;
mod driver;

pub use controller::{choose_controls, ControlChoice, PerfectOracle, ReactivityPredictor, SurrogatePredictor};
pub use driver::{optimize_loop, oracle_prelude, run_iteration, IterationSettings, LoopReport, Retrainer, RunInOutcome, RunInRecord, RunInStep};

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, Result};
use crate::sim::controls::{
    nominal_threshold_fima, NOMINAL_POWER_KW, NOMINAL_TIMESTEP_D, ROD_MAX_CM, ROD_PARKED_CM, RUNIN_START_GRAPHITE,
    RUNIN_START_POWER_KW,
};
use crate::sim::ControlVector;

/// Grid of `points` moves from `start` to `end`; index 0 is `start` and
/// index `points` is `end`. A grid with no moves has `start == end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl ControlGrid {
    pub fn step(&self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            (self.end - self.start) / self.points as f64
        }
    }

    pub fn value(&self, index: usize) -> f64 {
        if index >= self.points {
            self.end
        } else {
            self.start + self.step() * index as f64
        }
    }
}

/// Bidirectional trim grid `center + step * i` for `i` in
/// `min_index..=max_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimGrid {
    pub center: f64,
    pub step: f64,
    pub min_index: i32,
    pub max_index: i32,
}

impl TrimGrid {
    pub fn value(&self, index: i32) -> f64 {
        self.center + self.step * index.clamp(self.min_index, self.max_index) as f64
    }
}

/// Grid indices of power, graphite, rod and timestep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub power: usize,
    pub graphite: usize,
    pub rod: usize,
    pub timestep: i32,
}

/// The three goal-directed controls, in precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalControl {
    Power,
    Graphite,
    Rod,
}

impl GoalControl {
    pub const ALL: [GoalControl; 3] = [GoalControl::Power, GoalControl::Graphite, GoalControl::Rod];

    pub fn index(self, p: &GridPoint) -> usize {
        match self {
            GoalControl::Power => p.power,
            GoalControl::Graphite => p.graphite,
            GoalControl::Rod => p.rod,
        }
    }

    pub fn index_mut(self, p: &mut GridPoint) -> &mut usize {
        match self {
            GoalControl::Power => &mut p.power,
            GoalControl::Graphite => &mut p.graphite,
            GoalControl::Rod => &mut p.rod,
        }
    }
}

/// Goal states, grids and controller limits for one run-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSchedule {
    pub power: ControlGrid,
    pub graphite: ControlGrid,
    pub rod: ControlGrid,
    pub timestep: TrimGrid,
    pub discard_threshold: f64,
    /// Intermediate goals, visited in order before the final state.
    #[serde(default)]
    pub waypoints: Vec<GridPoint>,
    pub tolerance_pcm: f64,
    /// Minimum grid-index advances per step, summed over goal controls.
    pub min_perturbations: usize,
    /// Predictor queries allowed per step.
    pub query_budget: usize,
    pub safety_envelope_pcm: f64,
    /// Largest timestep-index change in one step; `None` allows the whole
    /// trim range.
    #[serde(default)]
    pub max_trim_move: Option<usize>,
}

impl GoalSchedule {
    /// 10 kW to 280 MW, graphite 0.8879 to 0, rods 60.25 to 369.47 cm over
    /// 1,000 moves each; timestep trim 6.525 d +- 0.01305 d per index.
    pub fn reference(min_perturbations: usize) -> Self {
        Self {
            power: ControlGrid {
                start: RUNIN_START_POWER_KW,
                end: NOMINAL_POWER_KW,
                points: 1000,
            },
            graphite: ControlGrid {
                start: RUNIN_START_GRAPHITE,
                end: 0.0,
                points: 1000,
            },
            rod: ControlGrid {
                start: ROD_PARKED_CM,
                end: ROD_MAX_CM,
                points: 1000,
            },
            timestep: TrimGrid {
                center: NOMINAL_TIMESTEP_D,
                step: 0.01305,
                min_index: -499,
                max_index: 500,
            },
            discard_threshold: nominal_threshold_fima(),
            waypoints: Vec::new(),
            tolerance_pcm: 50.0,
            min_perturbations,
            query_budget: 64,
            safety_envelope_pcm: 2000.0,
            max_trim_move: None,
        }
    }

    /// Grid point nearest to `controls`, clamped to each grid.
    pub fn snap(&self, controls: &ControlVector) -> GridPoint {
        let idx = |g: &ControlGrid, v: f64| -> usize {
            let step = g.step();
            if step == 0.0 {
                return 0;
            }
            libm::round((v - g.start) / step).clamp(0.0, g.points as f64) as usize
        };
        let t = &self.timestep;
        let ti = if t.step == 0.0 {
            0.0
        } else {
            libm::round((controls.timestep - t.center) / t.step)
        };
        GridPoint {
            power: idx(&self.power, controls.power),
            graphite: idx(&self.graphite, controls.graphite_fraction),
            rod: idx(&self.rod, controls.rod_depth),
            timestep: ti.clamp(t.min_index as f64, t.max_index as f64) as i32,
        }
    }

    /// Timestep indices reachable in one step from `at`.
    pub fn trim_bounds(&self, at: &GridPoint) -> (i32, i32) {
        let t = &self.timestep;
        match self.max_trim_move {
            Some(m) => {
                let m = m.min(i32::MAX as usize) as i32;
                (t.min_index.max(at.timestep.saturating_sub(m)), t.max_index.min(at.timestep.saturating_add(m)))
            }
            None => (t.min_index, t.max_index),
        }
    }

    pub fn grid(&self, c: GoalControl) -> &ControlGrid {
        match c {
            GoalControl::Power => &self.power,
            GoalControl::Graphite => &self.graphite,
            GoalControl::Rod => &self.rod,
        }
    }

    pub fn final_point(&self) -> GridPoint {
        GridPoint {
            power: self.power.points,
            graphite: self.graphite.points,
            rod: self.rod.points,
            timestep: 0,
        }
    }

    /// The goal currently steered toward: the first waypoint not yet
    /// reached, else the final state.
    pub fn current_goal(&self, at: &GridPoint) -> GridPoint {
        self.waypoints
            .iter()
            .find(|w| GoalControl::ALL.iter().any(|c| c.index(at) < c.index(w)))
            .copied()
            .unwrap_or_else(|| self.final_point())
    }

    pub fn goals_reached(&self, at: &GridPoint) -> bool {
        let f = self.final_point();
        GoalControl::ALL.iter().all(|c| c.index(at) >= c.index(&f))
    }

    pub fn controls(&self, at: &GridPoint) -> ControlVector {
        ControlVector {
            graphite_fraction: self.graphite.value(at.graphite).max(0.0),
            power: self.power.value(at.power),
            rod_depth: self.rod.value(at.rod),
            timestep: self.timestep.value(at.timestep),
            discard_threshold: self.discard_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("power", &self.power), ("graphite", &self.graphite), ("rod", &self.rod)] {
            if !g.start.is_finite() || !g.end.is_finite() || (g.points == 0 && g.start != g.end) {
                return Err(invalid_config!("{name} grid needs finite ends and points > 0 unless start = end"));
            }
        }
        let t = &self.timestep;
        if t.min_index > 0 || t.max_index < 0 || !(t.step > 0.0) {
            return Err(invalid_config!("timestep trim must contain index 0 and have a positive step"));
        }
        if !(self.tolerance_pcm > 0.0) || self.min_perturbations == 0 || self.query_budget == 0 {
            return Err(invalid_config!("tolerance, s and query budget must be positive"));
        }
        if !(self.safety_envelope_pcm > self.tolerance_pcm) {
            return Err(invalid_config!("safety envelope must exceed the tolerance"));
        }
        for w in &self.waypoints {
            if GoalControl::ALL.iter().any(|c| c.index(w) > self.grid(*c).points) {
                return Err(invalid_config!("waypoint {w:?} lies beyond a grid end"));
            }
        }
        let lo = self.controls(&GridPoint {
            timestep: t.min_index,
            ..GridPoint::default()
        });
        let hi = self.controls(&GridPoint {
            timestep: t.max_index,
            ..self.final_point()
        });
        lo.validate()?;
        hi.validate()
    }
}
