//! Feature importance, autoregressive forecasting and mesh reconstruction
//! over trained surrogates.

mod forecast;
mod importance;
mod mesh;

pub use forecast::{
    evaluate_scenario, forecast, scenario_suite, simulate_scenario, window_degradation, FuelLedger, ForecastTrace,
    Scenario, ScenarioOutcome, ScenarioTruth,
};
pub use importance::{permutation_importance, ImportanceReport};
pub use mesh::{mesh_reconstruction_report, MeshMask, ReconstructionRow, ScoreSource};

use crate::error::{Error, Result};
use crate::lstm::ModelSet;
use crate::sequence::{Target, WINDOW};

/// Anything that maps a raw feature window to a target value.
pub trait Surrogate {
    /// Steps per input window.
    fn window(&self) -> usize;
    fn supports(&self, target: Target) -> bool;
    fn predict(&self, target: Target, window: &[f64]) -> Result<f64>;

    /// Supported targets in canonical order.
    fn targets(&self) -> alloc::vec::Vec<Target> {
        Target::all().into_iter().filter(|t| self.supports(*t)).collect()
    }
}

impl Surrogate for ModelSet {
    fn window(&self) -> usize {
        self.models.first().map_or(WINDOW, |m| m.config.window)
    }

    fn supports(&self, target: Target) -> bool {
        self.get(target).is_some()
    }

    fn predict(&self, target: Target, window: &[f64]) -> Result<f64> {
        self.get(target)
            .ok_or_else(|| Error::ModelsUnavailable(alloc::format!("no model for `{}`", target.name())))?
            .predict(window)
    }
}
