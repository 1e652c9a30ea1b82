use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

/// MWd/kgHM per %FIMA, used to accept discard thresholds in either unit.
pub const MWD_PER_KGHM_PER_FIMA: f64 = 9.4;

/// Parked rod depth; rods at or above this depth carry no worth.
pub const ROD_PARKED_CM: f64 = 60.25;
/// Rod tip at the bottom of the active core.
pub const ROD_MAX_CM: f64 = 369.47;
/// Benchmark full power.
pub const NOMINAL_POWER_KW: f64 = 280_000.0;
/// Benchmark depletion step (522 d residence, 10 axial zones, 8 passes).
pub const NOMINAL_TIMESTEP_D: f64 = 6.525;
/// Upper legal power, 120 % of nominal.
pub const POWER_MAX_KW: f64 = 1.2 * NOMINAL_POWER_KW;
pub const RUNIN_START_GRAPHITE: f64 = 0.8879;
pub const RUNIN_START_POWER_KW: f64 = 10.0;
pub const TIMESTEP_MAX_D: f64 = 13.05;
pub const THRESHOLD_MAX_FIMA: f64 = 25.0;

pub fn mwd_per_kghm_to_fima(mwd_per_kghm: f64) -> f64 {
    mwd_per_kghm / MWD_PER_KGHM_PER_FIMA
}

pub fn fima_to_mwd_per_kghm(fima: f64) -> f64 {
    fima * MWD_PER_KGHM_PER_FIMA
}

/// Benchmark discard threshold: 180 MWd/kgHM.
pub fn nominal_threshold_fima() -> f64 {
    mwd_per_kghm_to_fima(180.0)
}

/// The five operator-set inputs for one depletion step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    /// Fraction of inserted pebbles that are graphite dummies.
    pub graphite_fraction: f64,
    /// kW
    pub power: f64,
    /// cm inserted from the top
    pub rod_depth: f64,
    /// days
    pub timestep: f64,
    /// %FIMA
    pub discard_threshold: f64,
}

/// Which control a value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    GraphiteFraction,
    Power,
    RodDepth,
    Timestep,
    DiscardThreshold,
}

impl ControlKind {
    pub const ALL: [ControlKind; 5] = [
        ControlKind::GraphiteFraction,
        ControlKind::Power,
        ControlKind::RodDepth,
        ControlKind::Timestep,
        ControlKind::DiscardThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlKind::GraphiteFraction => "graphite_fraction",
            ControlKind::Power => "power",
            ControlKind::RodDepth => "rod_depth",
            ControlKind::Timestep => "timestep",
            ControlKind::DiscardThreshold => "discard_threshold",
        }
    }

    /// Legal `(min, max)`; the lower bound is exclusive for power, timestep
    /// and threshold.
    pub fn legal_range(self) -> (f64, f64) {
        match self {
            ControlKind::GraphiteFraction => (0.0, 1.0),
            ControlKind::Power => (0.0, POWER_MAX_KW),
            ControlKind::RodDepth => (0.0, ROD_MAX_CM),
            ControlKind::Timestep => (0.0, TIMESTEP_MAX_D),
            ControlKind::DiscardThreshold => (0.0, THRESHOLD_MAX_FIMA),
        }
    }

    fn lower_exclusive(self) -> bool {
        matches!(
            self,
            ControlKind::Power | ControlKind::Timestep | ControlKind::DiscardThreshold
        )
    }

    pub fn is_legal(self, value: f64) -> bool {
        let (lo, hi) = self.legal_range();
        value.is_finite()
            && value <= hi
            && if self.lower_exclusive() { value > lo } else { value >= lo }
    }
}

impl ControlVector {
    /// Full-power operating point: no dummy pebbles, rods at full depth,
    /// nominal circulation and threshold.
    pub fn benchmark() -> Self {
        Self {
            graphite_fraction: 0.0,
            power: NOMINAL_POWER_KW,
            rod_depth: ROD_MAX_CM,
            timestep: NOMINAL_TIMESTEP_D,
            discard_threshold: nominal_threshold_fima(),
        }
    }

    /// Operating point at the start of running-in.
    pub fn runin_start() -> Self {
        Self {
            graphite_fraction: RUNIN_START_GRAPHITE,
            power: RUNIN_START_POWER_KW,
            rod_depth: ROD_PARKED_CM,
            timestep: NOMINAL_TIMESTEP_D,
            discard_threshold: nominal_threshold_fima(),
        }
    }

    pub fn get(&self, kind: ControlKind) -> f64 {
        match kind {
            ControlKind::GraphiteFraction => self.graphite_fraction,
            ControlKind::Power => self.power,
            ControlKind::RodDepth => self.rod_depth,
            ControlKind::Timestep => self.timestep,
            ControlKind::DiscardThreshold => self.discard_threshold,
        }
    }

    pub fn set(&mut self, kind: ControlKind, value: f64) {
        match kind {
            ControlKind::GraphiteFraction => self.graphite_fraction = value,
            ControlKind::Power => self.power = value,
            ControlKind::RodDepth => self.rod_depth = value,
            ControlKind::Timestep => self.timestep = value,
            ControlKind::DiscardThreshold => self.discard_threshold = value,
        }
    }

    pub fn with(mut self, kind: ControlKind, value: f64) -> Self {
        self.set(kind, value);
        self
    }

    pub fn as_array(&self) -> [f64; 5] {
        ControlKind::ALL.map(|k| self.get(k))
    }

    /// Every field outside its legal range, in field order.
    pub fn violations(&self) -> impl Iterator<Item = (ControlKind, f64)> + '_ {
        ControlKind::ALL
            .into_iter()
            .map(|k| (k, self.get(k)))
            .filter(|&(k, v)| !k.is_legal(v))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((kind, value)) = self.violations().next() {
            let (lo, hi) = kind.legal_range();
            return Err(invalid_input!(
                "control `{}` = {value} outside legal range ({lo}, {hi}]",
                kind.name()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_is_legal() {
        ControlVector::benchmark().validate().unwrap();
        assert!((nominal_threshold_fima() - 19.148936).abs() < 1e-5);
    }

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        let c = ControlVector::benchmark();
        assert!(c.with(ControlKind::RodDepth, 400.0).validate().is_err());
        assert!(c.with(ControlKind::RodDepth, ROD_MAX_CM).validate().is_ok());
        assert!(c.with(ControlKind::Power, 0.0).validate().is_err());
        assert!(c.with(ControlKind::Timestep, f64::NAN).validate().is_err());
        assert!(c.with(ControlKind::GraphiteFraction, 1.0).validate().is_ok());
        assert!(c.with(ControlKind::GraphiteFraction, -1e-9).validate().is_err());
    }
}
