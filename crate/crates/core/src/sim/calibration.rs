//! Kernel calibration against the full-power equilibrium and the running-in
//! start point.
//!
//! Three constants are fitted in sequence:
//!
//! 1. `burnup_per_kwd` in closed form, so that a pebble completing the
//!    nominal number of passes at the core-average power reaches the discard
//!    threshold times `1 + discharge_margin`;
//! 2. `k_fresh` by bisection on the mean `k_eff` of the benchmark sequence
//!    over its final `averaging_steps` steps;
//! 3. `dilution_exponent` by bisection on the `k_eff` of the uniform fresh
//!    core loaded at the running-in start mix.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::controls::ControlVector;
use super::state::{CoreSim, SimConfig};
use crate::error::{invalid_config, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub equilibrium_keff: f64,
    /// Excess reactivity of the fresh start-up core with rods parked, pcm.
    pub startup_excess_pcm: f64,
    pub discharge_margin: f64,
    pub passes: usize,
    pub equilibrium_steps: usize,
    pub averaging_steps: usize,
    pub relative_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            equilibrium_keff: 1.0,
            startup_excess_pcm: 300.0,
            discharge_margin: 0.0,
            passes: 8,
            equilibrium_steps: 480,
            averaging_steps: 80,
            relative_tolerance: 1e-6,
            max_iterations: 60,
        }
    }
}

/// Equilibrium observables of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMetrics {
    /// `k_eff` of every step in the averaging window.
    pub keff_window: Vec<f64>,
    pub mean_keff: f64,
    /// Count-weighted mean burnup of pebbles discarded in the window.
    pub mean_discharge_burnup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub burnup_per_kwd: f64,
    pub k_fresh: f64,
    pub dilution_exponent: f64,
    pub equilibrium: EquilibriumMetrics,
    pub startup_keff: f64,
    pub k_fresh_iterations: usize,
    pub dilution_iterations: usize,
}

/// %FIMA per kW d per pebble such that `passes` transits at the average
/// pebble power accumulate `threshold * (1 + margin)`.
pub fn analytic_burnup_per_kwd(config: &SimConfig, controls: &ControlVector, passes: usize, margin: f64) -> f64 {
    let fuel = config.grid.total_pebbles as f64 * (1.0 - controls.graphite_fraction);
    let residence_steps = (passes * config.grid.n_axial) as f64;
    controls.discard_threshold * (1.0 + margin) * fuel / (controls.power * controls.timestep * residence_steps)
}

/// Runs the benchmark sequence noise-free from a staggered start and averages
/// over its tail.
pub fn equilibrium_metrics(
    config: &SimConfig,
    controls: &ControlVector,
    steps: usize,
    averaging_steps: usize,
) -> Result<EquilibriumMetrics> {
    if averaging_steps == 0 || averaging_steps > steps {
        return Err(invalid_config!("averaging window must lie within the run"));
    }
    let sim = CoreSim::new(config.clone())?.with_noise(false);
    let mut state = sim.staggered_state(controls, 8, controls.discard_threshold, 0)?;
    let mut keff_window = Vec::with_capacity(averaging_steps);
    let (mut discarded, mut discarded_burnup) = (0.0, 0.0);
    for i in 0..steps {
        let r = sim.advance_step(&state, controls)?;
        if i >= steps - averaging_steps {
            keff_window.push(r.k_eff);
            discarded += r.discharge.discarded_count;
            discarded_burnup += r.discharge.discarded_count * r.discharge.discarded_mean_burnup;
        }
        state = r.state_after;
    }
    let mean_keff = keff_window.iter().sum::<f64>() / keff_window.len() as f64;
    let mean_discharge_burnup = if discarded > 0.0 { discarded_burnup / discarded } else { 0.0 };
    Ok(EquilibriumMetrics {
        keff_window,
        mean_keff,
        mean_discharge_burnup,
    })
}

/// Noise-free `k_eff` of the uniform fresh core under `controls`.
pub fn fresh_core_keff(config: &SimConfig, controls: &ControlVector) -> Result<f64> {
    let sim = CoreSim::new(config.clone())?.with_noise(false);
    let state = sim.fresh_state(controls, 0)?;
    Ok(sim.solve(&state, controls, false).k_eff)
}

/// Bisection for an increasing `f` on `[lo, hi]`, expanding the bracket
/// geometrically if needed.
fn bisect<F>(mut f: F, target: f64, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut expand = 0;
    while f(lo)? > target {
        lo *= 0.5;
        expand += 1;
        if expand > 40 {
            return Err(invalid_config!("calibration bracket could not be expanded downward"));
        }
    }
    while f(hi)? < target {
        hi *= 2.0;
        expand += 1;
        if expand > 40 {
            return Err(invalid_config!("calibration bracket could not be expanded upward"));
        }
    }
    let mut iter = 0;
    while iter < max_iter && (hi - lo) > tol * hi.abs().max(1e-12) {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    Ok((0.5 * (lo + hi), iter))
}

/// Fits `burnup_per_kwd`, `k_fresh` and `dilution_exponent` in place.
pub fn calibrate(config: &SimConfig, targets: &CalibrationTargets) -> Result<(SimConfig, CalibrationReport)> {
    config.validate()?;
    let benchmark = ControlVector::benchmark();
    let startup = ControlVector::runin_start();
    let mut cfg = config.clone();

    cfg.kernel.burnup_per_kwd = analytic_burnup_per_kwd(&cfg, &benchmark, targets.passes, targets.discharge_margin);

    let base = cfg.clone();
    let (k_fresh, k_iter) = bisect(
        |k| {
            let mut c = base.clone();
            c.kernel.k_fresh = k;
            Ok(equilibrium_metrics(&c, &benchmark, targets.equilibrium_steps, targets.averaging_steps)?.mean_keff)
        },
        targets.equilibrium_keff,
        0.5 * cfg.kernel.k_fresh,
        1.5 * cfg.kernel.k_fresh,
        targets.relative_tolerance,
        targets.max_iterations,
    )?;
    cfg.kernel.k_fresh = k_fresh;

    // k falls as the exponent grows; bisect on the negated exponent's effect.
    let startup_target = 1.0 / (1.0 - targets.startup_excess_pcm * 1e-5);
    let base = cfg.clone();
    let (neg_alpha, a_iter) = bisect(
        |x| {
            let mut c = base.clone();
            c.kernel.dilution_exponent = 1.0 / x;
            fresh_core_keff(&c, &startup)
        },
        startup_target,
        0.5,
        50.0,
        targets.relative_tolerance,
        targets.max_iterations,
    )?;
    cfg.kernel.dilution_exponent = 1.0 / neg_alpha;

    let equilibrium = equilibrium_metrics(&cfg, &benchmark, targets.equilibrium_steps, targets.averaging_steps)?;
    let startup_keff = fresh_core_keff(&cfg, &startup)?;
    let report = CalibrationReport {
        burnup_per_kwd: cfg.kernel.burnup_per_kwd,
        k_fresh: cfg.kernel.k_fresh,
        dilution_exponent: cfg.kernel.dilution_exponent,
        equilibrium,
        startup_keff,
        k_fresh_iterations: k_iter,
        dilution_iterations: a_iter,
    };
    Ok((cfg, report))
}
