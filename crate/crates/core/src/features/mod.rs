//! Discharge measurements and model input features.

pub mod batch;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use batch::{DischargeBatch, DischargeEntry};

use crate::error::{invalid_config, invalid_input, Result};
use crate::rng;
use crate::sim::controls::{ControlKind, ControlVector};

pub const RADIAL_FEATURES: usize = 4;
pub const BURNUP_BINS: usize = 9;
/// %FIMA
pub const BIN_WIDTH: f64 = 2.5;
pub const N_FEATURES: usize = 5 + 1 + RADIAL_FEATURES + BURNUP_BINS + 2;
/// Index of the first feature that depends on the core response rather
/// than on the operator.
pub const FIRST_DEPENDENT: usize = 5;
pub const N_DEPENDENT: usize = N_FEATURES - FIRST_DEPENDENT;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "graphite_fraction",
    "power",
    "rod_depth",
    "timestep",
    "discard_threshold",
    "power_per_pebble",
    "radial_lastpass_bu_1",
    "radial_lastpass_bu_2",
    "radial_lastpass_bu_3",
    "radial_lastpass_bu_4",
    "burnup_bin_1",
    "burnup_bin_2",
    "burnup_bin_3",
    "burnup_bin_4",
    "burnup_bin_5",
    "burnup_bin_6",
    "burnup_bin_7",
    "burnup_bin_8",
    "burnup_bin_9",
    "avg_discharge_burnup",
    "discarded_count",
];

/// Model inputs for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub controls: ControlVector,
    /// kW per fuel pebble.
    pub power_per_pebble: f64,
    /// %FIMA
    pub radial_lastpass_bu: [f64; RADIAL_FEATURES],
    pub burnup_bin_counts: [f64; BURNUP_BINS],
    /// %FIMA
    pub avg_discharge_burnup: f64,
    pub discarded_count: f64,
}

impl FeatureVector {
    /// Noise-free features of one step.
    ///
    /// `previous` supplies carry-forward values for radial zones or whole
    /// batches with nothing discharged.
    pub fn from_step(
        controls: &ControlVector,
        fuel_pebbles: f64,
        batch: &DischargeBatch,
        previous: Option<&FeatureVector>,
    ) -> Result<Self> {
        if batch.n_radial() != RADIAL_FEATURES {
            return Err(invalid_input!(
                "discharge batch has {} radial zones, features expect {RADIAL_FEATURES}",
                batch.n_radial()
            ));
        }
        let power_per_pebble = if fuel_pebbles > 0.0 { controls.power / fuel_pebbles } else { 0.0 };
        let (avg, discarded) = summary_features(batch, previous.map(|p| p.avg_discharge_burnup));
        Ok(Self {
            controls: *controls,
            power_per_pebble,
            radial_lastpass_bu: radial_lastpass_burnup(batch, previous.map(|p| &p.radial_lastpass_bu)),
            burnup_bin_counts: bin_burnups(batch),
            avg_discharge_burnup: avg,
            discarded_count: discarded,
        })
    }

    pub fn to_array(&self) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        out[..5].copy_from_slice(&self.controls.as_array());
        out[5] = self.power_per_pebble;
        out[6..10].copy_from_slice(&self.radial_lastpass_bu);
        out[10..19].copy_from_slice(&self.burnup_bin_counts);
        out[19] = self.avg_discharge_burnup;
        out[20] = self.discarded_count;
        out
    }

    pub fn from_array(values: &[f64]) -> Result<Self> {
        if values.len() != N_FEATURES {
            return Err(crate::Error::DimensionMismatch {
                expected: N_FEATURES,
                got: values.len(),
            });
        }
        let mut controls = ControlVector::benchmark();
        for (i, kind) in ControlKind::ALL.into_iter().enumerate() {
            controls.set(kind, values[i]);
        }
        let mut radial = [0.0; RADIAL_FEATURES];
        radial.copy_from_slice(&values[6..10]);
        let mut bins = [0.0; BURNUP_BINS];
        bins.copy_from_slice(&values[10..19]);
        Ok(Self {
            controls,
            power_per_pebble: values[5],
            radial_lastpass_bu: radial,
            burnup_bin_counts: bins,
            avg_discharge_burnup: values[19],
            discarded_count: values[20],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Count-weighted last-pass burnup per radial zone; empty zones keep the
/// previous value (or 0 without history).
pub fn radial_lastpass_burnup(
    batch: &DischargeBatch,
    previous: Option<&[f64; RADIAL_FEATURES]>,
) -> [f64; RADIAL_FEATURES] {
    let mut out = previous.copied().unwrap_or([0.0; RADIAL_FEATURES]);
    for (r, zone) in batch.zones.iter().enumerate().take(RADIAL_FEATURES) {
        let n: f64 = zone.iter().map(|e| e.pebble_count).sum();
        if n > 0.0 {
            out[r] = zone.iter().map(|e| e.pebble_count * e.last_pass_burnup).sum::<f64>() / n;
        }
    }
    out
}

/// Discharged pebble counts in 2.5 %FIMA bins; burnups of 22.5 and above
/// fall in the last bin.
pub fn bin_burnups(batch: &DischargeBatch) -> [f64; BURNUP_BINS] {
    let mut bins = [0.0; BURNUP_BINS];
    for e in batch.entries() {
        let idx = ((e.total_burnup / BIN_WIDTH) as usize).min(BURNUP_BINS - 1);
        bins[idx] += e.pebble_count;
    }
    bins
}

/// Mean discharge burnup (carried forward for an empty batch) and the
/// discarded count.
pub fn summary_features(batch: &DischargeBatch, previous_avg: Option<f64>) -> (f64, f64) {
    let n = batch.total_count();
    let avg = if n > 0.0 {
        batch.entries().map(|e| e.pebble_count * e.total_burnup).sum::<f64>() / n
    } else {
        previous_avg.unwrap_or(0.0)
    };
    (avg, batch.discarded_count)
}

/// Measurement-error model for the dependent features, as mean absolute
/// percent errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePolicy {
    pub burnup_bins_mape: f64,
    pub avg_discharge_mape: f64,
    pub discarded_mape: f64,
    pub radial_lastpass_mape: f64,
    pub rng_seed: u64,
}

impl Default for NoisePolicy {
    fn default() -> Self {
        Self {
            burnup_bins_mape: 5.0,
            avg_discharge_mape: 2.5,
            discarded_mape: 5.0,
            radial_lastpass_mape: 10.0,
            rng_seed: 0,
        }
    }
}

impl NoisePolicy {
    pub fn noiseless(rng_seed: u64) -> Self {
        Self {
            burnup_bins_mape: 0.0,
            avg_discharge_mape: 0.0,
            discarded_mape: 0.0,
            radial_lastpass_mape: 0.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [
            self.burnup_bins_mape,
            self.avg_discharge_mape,
            self.discarded_mape,
            self.radial_lastpass_mape,
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid_config!("MAPE values must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Standard deviation of a zero-mean normal whose mean absolute value is
/// `mape` percent.
pub fn mape_sigma(mape: f64) -> f64 {
    mape / (100.0 * libm::sqrt(2.0 / core::f64::consts::PI))
}

/// Multiplies every dependent feature except power-per-pebble by
/// `1 + eps`, clamping at zero. The draw is keyed by `(policy seed, step)`.
pub fn apply_noise(features: &FeatureVector, policy: &NoisePolicy, step_index: u64) -> FeatureVector {
    let mut rng = rng::stream(policy.rng_seed, &[rng::FEATURE_NOISE, step_index]);
    let mut perturb = |x: f64, mape: f64| -> f64 {
        let e: f64 = StandardNormal.sample(&mut rng);
        if mape == 0.0 {
            return x;
        }
        (x * (1.0 + mape_sigma(mape) * e)).max(0.0)
    };
    let mut out = *features;
    for v in out.radial_lastpass_bu.iter_mut() {
        *v = perturb(*v, policy.radial_lastpass_mape);
    }
    for v in out.burnup_bin_counts.iter_mut() {
        *v = perturb(*v, policy.burnup_bins_mape);
    }
    out.avg_discharge_burnup = perturb(out.avg_discharge_burnup, policy.avg_discharge_mape);
    out.discarded_count = perturb(out.discarded_count, policy.discarded_mape);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn entry(n: f64, last: f64, total: f64) -> DischargeEntry {
        DischargeEntry {
            pebble_count: n,
            last_pass_burnup: last,
            total_burnup: total,
        }
    }

    fn batch(zones: Vec<Vec<DischargeEntry>>, discarded: f64) -> DischargeBatch {
        DischargeBatch {
            zones,
            discarded_count: discarded,
            discarded_mean_burnup: 0.0,
            step_index: 1,
        }
    }

    #[test]
    fn radial_means() {
        let b = batch(
            vec![
                vec![entry(5.0, 2.5, 10.0)],
                vec![entry(2.0, 1.0, 1.0), entry(2.0, 3.0, 3.0)],
                vec![entry(1.0, 10.0, 10.0), entry(9.0, 0.0, 0.0)],
                vec![],
            ],
            0.0,
        );
        let r = radial_lastpass_burnup(&b, Some(&[7.0, 7.0, 7.0, 7.0]));
        assert_eq!(r[0], 2.5);
        assert_relative_eq!(r[1], 2.0);
        assert_relative_eq!(r[2], 1.0);
        assert_eq!(r[3], 7.0);
    }

    #[test]
    fn bins_and_overflow() {
        let b = batch(
            vec![
                vec![entry(1.0, 0.0, 1.0), entry(1.0, 0.0, 3.0)],
                vec![entry(1.0, 0.0, 22.49)],
                vec![entry(1.0, 0.0, 30.0)],
                vec![],
            ],
            0.0,
        );
        assert_eq!(bin_burnups(&b), [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let zero = batch(vec![vec![entry(4.0, 0.0, 0.0)], vec![], vec![], vec![]], 0.0);
        assert_eq!(bin_burnups(&zero)[0], 4.0);
        let empty = batch(vec![vec![]; 4], 0.0);
        assert_eq!(bin_burnups(&empty), [0.0; BURNUP_BINS]);
    }

    #[test]
    fn summaries() {
        let b = batch(vec![vec![entry(1.0, 0.0, 10.0), entry(1.0, 0.0, 20.0)], vec![], vec![], vec![]], 1234.0);
        assert_eq!(summary_features(&b, None), (15.0, 1234.0));
        let u = batch(vec![vec![entry(3.0, 0.0, 7.5)], vec![entry(2.0, 0.0, 7.5)], vec![], vec![]], 0.0);
        assert_relative_eq!(summary_features(&u, None).0, 7.5);
        let empty = batch(vec![vec![]; 4], 0.0);
        assert_eq!(summary_features(&empty, Some(18.0)), (18.0, 0.0));
    }

    #[test]
    fn sigma_from_mape() {
        // sigma = 10 / (100 sqrt(2 / pi))
        assert_relative_eq!(mape_sigma(10.0), 0.125_331_413_731_550_03, max_relative = 1e-14);
        assert_eq!(mape_sigma(0.0), 0.0);
    }

    #[test]
    fn folded_normal_mean_matches_mape() {
        let sigma = mape_sigma(5.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            acc += (sigma * e).abs();
        }
        assert!((acc / n as f64 - 0.05).abs() < 0.001);
    }

    fn sample_features() -> FeatureVector {
        let b = batch(
            vec![
                vec![entry(100.0, 2.4, 19.0)],
                vec![entry(80.0, 2.2, 12.0)],
                vec![entry(70.0, 2.0, 5.0)],
                vec![entry(60.0, 1.8, 21.0)],
            ],
            150.0,
        );
        FeatureVector::from_step(&ControlVector::benchmark(), 250_190.0, &b, None).unwrap()
    }

    #[test]
    fn zero_mape_is_identity_and_controls_untouched() {
        let f = sample_features();
        assert_eq!(apply_noise(&f, &NoisePolicy::noiseless(3), 9), f);
        let g = apply_noise(&f, &NoisePolicy::default(), 9);
        assert_eq!(g.controls, f.controls);
        assert_eq!(g.power_per_pebble, f.power_per_pebble);
        assert_ne!(g.burnup_bin_counts, f.burnup_bin_counts);
        assert_eq!(g, apply_noise(&f, &NoisePolicy::default(), 9));
    }

    #[test]
    fn array_round_trip() {
        let f = sample_features();
        let a = f.to_array();
        assert_eq!(FeatureVector::from_array(&a).unwrap(), f);
        assert_eq!(a.len(), FEATURE_NAMES.len());
        assert_relative_eq!(a.iter().skip(10).take(9).sum::<f64>(), 310.0);
    }

    #[test]
    fn bin_centres_track_mean_within_one_bin() {
        let f = sample_features();
        let n: f64 = f.burnup_bin_counts.iter().sum();
        let centre_mean: f64 = f
            .burnup_bin_counts
            .iter()
            .enumerate()
            .map(|(i, c)| c * (i as f64 + 0.5) * BIN_WIDTH)
            .sum::<f64>()
            / n;
        assert!((centre_mean - f.avg_discharge_burnup).abs() <= BIN_WIDTH);
    }
}
