use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// One burnup group as seen by the discharge measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DischargeEntry {
    pub pebble_count: f64,
    /// %FIMA accrued on the pass just finished.
    pub last_pass_burnup: f64,
    /// %FIMA
    pub total_burnup: f64,
}

/// Fuel pebbles leaving the core top during one step, grouped by the radial
/// zone they travelled through.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DischargeBatch {
    pub zones: Vec<Vec<DischargeEntry>>,
    /// Pebbles removed for exceeding the discard threshold.
    pub discarded_count: f64,
    /// Count-weighted mean burnup of the removed pebbles (0 when none).
    pub discarded_mean_burnup: f64,
    pub step_index: u64,
}

impl DischargeBatch {
    pub fn n_radial(&self) -> usize {
        self.zones.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DischargeEntry> {
        self.zones.iter().flatten()
    }

    pub fn total_count(&self) -> f64 {
        self.entries().map(|e| e.pebble_count).sum()
    }

    pub fn is_valid(&self) -> bool {
        self.discarded_count >= 0.0
            && self.entries().all(|e| {
                e.pebble_count >= 0.0 && e.last_pass_burnup >= 0.0 && e.total_burnup >= 0.0
            })
    }
}
