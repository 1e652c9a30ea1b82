//! Core state and the depletion stepper.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::controls::ControlVector;
use super::depletion::{
    apply_discard, deplete_zones, insert_fresh, regroup_discharge, MAX_BURNUP_GROUPS,
};
use super::grid::{GridSpec, ZoneGrid};
use super::inventory::{BurnupGroup, PebbleCount};
use super::kernel::{solve, KernelConstants, KernelGeometry, MeshTally, NeutronicsSolution, TallyNoise};
use crate::error::{invalid_config, invalid_input, invalid_state, Error, Result};
use crate::features::batch::{DischargeBatch, DischargeEntry};
use crate::rng;

/// Current calibration file layout.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Everything the simulator needs besides the state itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub schema_version: u32,
    pub grid: GridSpec,
    pub kernel: KernelConstants,
    pub noise: TallyNoise,
    /// Relative standard deviation of pebble burnup within a group.
    pub discard_spread: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid_config!(
                "unsupported calibration schema {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.kernel.validate()?;
        if !(self.discard_spread > 0.0) {
            return Err(invalid_config!("discard_spread must be positive"));
        }
        let n = self.noise.power_rel.min(self.noise.flux_rel).min(self.noise.keff_jitter_pcm);
        if !(n >= 0.0) {
            return Err(invalid_config!("noise levels must be non-negative"));
        }
        let zones = (self.grid.n_radial * self.grid.n_axial) as u64;
        if zones == 0 || PebbleCount::whole(self.grid.total_pebbles).div_exact(zones).is_none() {
            return Err(invalid_config!(
                "{} pebbles cannot be split exactly over {zones} zones",
                self.grid.total_pebbles
            ));
        }
        ZoneGrid::from_spec(&self.grid).map(|_| ())
    }
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreState {
    pub grid: ZoneGrid,
    /// Indexed by zone id (`axial * n_radial + radial`).
    pub inventory: Vec<Vec<BurnupGroup>>,
    pub step_index: u64,
    pub total_pebbles: u64,
    pub elapsed_days: f64,
    pub rng_seed: u64,
    /// Zone power share from the latest kernel evaluation; drives the next
    /// depletion.
    pub power_fractions: Vec<f64>,
    /// Controls applied on the latest step.
    pub controls: ControlVector,
}

impl CoreState {
    pub fn zone_capacity(&self) -> PebbleCount {
        PebbleCount::whole(self.total_pebbles)
            .div_exact(self.grid.n_zones() as u64)
            .unwrap_or(PebbleCount::ZERO)
    }

    pub fn total_count(&self) -> PebbleCount {
        self.inventory.iter().flatten().map(|g| g.pebble_count).sum()
    }

    pub fn fuel_count(&self) -> f64 {
        self.inventory
            .iter()
            .flatten()
            .filter(|g| !g.is_graphite)
            .map(|g| g.pebble_count.as_f64())
            .sum()
    }

    pub fn graphite_count(&self) -> f64 {
        self.total_count().as_f64() - self.fuel_count()
    }

    /// Count-weighted mean burnup of all fuel in the core.
    pub fn mean_fuel_burnup(&self) -> f64 {
        let (mut n, mut b) = (0.0, 0.0);
        for g in self.inventory.iter().flatten().filter(|g| !g.is_graphite) {
            n += g.pebble_count.as_f64();
            b += g.pebble_count.as_f64() * g.mean_burnup;
        }
        if n > 0.0 { b / n } else { 0.0 }
    }

    /// Zones of axial layer `axial`, centre first.
    pub fn layer(&self, axial: usize) -> &[Vec<BurnupGroup>] {
        let n = self.grid.n_radial;
        &self.inventory[axial * n..(axial + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        let zones = self.grid.n_zones();
        if self.inventory.len() != zones || self.power_fractions.len() != zones {
            return Err(Error::DimensionMismatch {
                expected: zones,
                got: self.inventory.len().min(self.power_fractions.len()),
            });
        }
        let cap = self.zone_capacity();
        for (z, groups) in self.inventory.iter().enumerate() {
            if let Some(g) = groups.iter().find(|g| !g.is_valid()) {
                return Err(invalid_state!("zone {z} holds an invalid group: {g:?}"));
            }
            let n: PebbleCount = groups.iter().map(|g| g.pebble_count).sum();
            if n != cap {
                return Err(invalid_state!(
                    "zone {z} holds {} pebbles, capacity is {}",
                    n.as_f64(),
                    cap.as_f64()
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of one depletion step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub k_eff: f64,
    pub reactivity: f64,
    pub mesh: MeshTally,
    pub discharge: DischargeBatch,
    pub state_after: CoreState,
    /// No fissile material left; `k_eff` is pinned to a tiny positive value.
    pub dead_core: bool,
}

impl StepResult {
    pub fn reactivity_pcm(&self) -> f64 {
        self.reactivity * 1e5
    }
}

/// `(k - 1) / k`.
pub fn compute_reactivity(k_eff: f64) -> Result<f64> {
    if !(k_eff > 0.0) || !k_eff.is_finite() {
        return Err(invalid_input!("k_eff must be positive and finite, got {k_eff}"));
    }
    Ok((k_eff - 1.0) / k_eff)
}

/// The zone-model stepper. Holds the calibration and the precomputed kernel
/// quadrature; states are passed by reference and never mutated in place.
#[derive(Debug, Clone)]
pub struct CoreSim {
    config: SimConfig,
    geometry: KernelGeometry,
    noise_enabled: bool,
}

impl CoreSim {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = ZoneGrid::from_spec(&config.grid)?;
        Ok(Self {
            geometry: KernelGeometry::new(&grid),
            config,
            noise_enabled: true,
        })
    }

    pub fn with_noise(mut self, enabled: bool) -> Self {
        self.noise_enabled = enabled;
        self
    }

    pub fn noise_enabled(&self) -> bool {
        self.noise_enabled
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.config.kernel
    }

    pub fn grid(&self) -> &ZoneGrid {
        self.geometry.grid()
    }

    fn empty_state(&self, seed: u64, controls: &ControlVector) -> CoreState {
        let zones = self.grid().n_zones();
        CoreState {
            grid: self.grid().clone(),
            inventory: vec![Vec::new(); zones],
            step_index: 0,
            total_pebbles: self.config.grid.total_pebbles,
            elapsed_days: 0.0,
            rng_seed: seed,
            power_fractions: vec![0.0; zones],
            controls: *controls,
        }
    }

    fn prime(&self, mut state: CoreState) -> Result<CoreState> {
        let sol = self.solve(&state, &state.controls.clone(), false);
        state.power_fractions = sol.power_fractions;
        state.validate()?;
        Ok(state)
    }

    /// Uniform fresh core: every zone holds fresh fuel and graphite in the
    /// ratio given by `controls.graphite_fraction`.
    pub fn fresh_state(&self, controls: &ControlVector, seed: u64) -> Result<CoreState> {
        controls.validate()?;
        let mut state = self.empty_state(seed, controls);
        let cap = state.zone_capacity();
        for zone in state.inventory.iter_mut() {
            let graphite = cap.fraction(controls.graphite_fraction);
            let fuel = cap - graphite;
            if !fuel.is_zero() {
                zone.push(BurnupGroup::fresh_fuel(fuel));
            }
            if !graphite.is_zero() {
                zone.push(BurnupGroup::graphite(graphite));
            }
        }
        self.prime(state)
    }

    /// All-fuel core staggered by pass: every zone holds `passes` equal
    /// groups whose burnup grows linearly with height and pass number up to
    /// `discharge_burnup`. A cheap starting point for equilibrium searches.
    pub fn staggered_state(
        &self,
        controls: &ControlVector,
        passes: usize,
        discharge_burnup: f64,
        seed: u64,
    ) -> Result<CoreState> {
        controls.validate()?;
        if passes == 0 || !(discharge_burnup >= 0.0) {
            return Err(invalid_input!("staggered state needs passes >= 1 and burnup >= 0"));
        }
        let mut state = self.empty_state(seed, controls);
        let cap = state.zone_capacity();
        let n_axial = self.grid().n_axial;
        let per_pass = discharge_burnup / passes as f64;
        for (z, zone) in state.inventory.iter_mut().enumerate() {
            let (a, _) = self.grid().zone_coords(z);
            let lp = per_pass * (a as f64 + 0.5) / n_axial as f64;
            for (p, count) in cap.split_even(passes).into_iter().enumerate() {
                let b = per_pass * p as f64 + lp;
                zone.push(BurnupGroup {
                    pebble_count: count,
                    mean_burnup: b,
                    last_pass_burnup: lp,
                    nuclide_summary: self.config.kernel.worth(b),
                    is_graphite: false,
                });
            }
        }
        self.prime(state)
    }

    /// Runs `steps` steps of constant `controls` from a staggered start and
    /// returns the final state, with the step counter reset to zero.
    pub fn equilibrium_state(&self, controls: &ControlVector, steps: usize, seed: u64) -> Result<CoreState> {
        let mut state = self.staggered_state(controls, 8, controls.discard_threshold, seed)?;
        let quiet = self.clone().with_noise(false);
        for _ in 0..steps {
            state = quiet.advance_step(&state, controls)?.state_after;
        }
        state.step_index = 0;
        state.elapsed_days = 0.0;
        Ok(state)
    }

    /// Kernel evaluation of `state` under `controls`. With `noisy`, the
    /// tallies and `k_eff` carry the noise stream of `state.step_index`.
    pub fn solve(&self, state: &CoreState, controls: &ControlVector, noisy: bool) -> NeutronicsSolution {
        let mut rng = rng::stream(state.rng_seed, &[rng::TALLY_NOISE, state.step_index]);
        let rng_ref: Option<&mut dyn rand::RngCore> =
            if noisy && self.noise_enabled { Some(&mut rng) } else { None };
        solve(
            &self.geometry,
            &self.config.kernel,
            &self.config.noise,
            &state.inventory,
            controls,
            rng_ref,
        )
    }

    /// One depletion step: deplete, advect, discharge, regroup, discard,
    /// refill, then evaluate the kernel on the new inventory.
    pub fn advance_step(&self, state: &CoreState, controls: &ControlVector) -> Result<StepResult> {
        controls.validate()?;
        if state.grid != *self.grid() {
            return Err(invalid_input!("state grid does not match the simulator grid"));
        }
        let n_radial = self.grid().n_radial;
        let top_start = (self.grid().n_axial - 1) * n_radial;

        let mut inventory = state.inventory.clone();
        deplete_zones(&mut inventory, controls, &state.power_fractions, &self.config.kernel)?;

        let top: Vec<Vec<BurnupGroup>> = inventory.drain(top_start..).collect();
        let mut discharge = DischargeBatch {
            zones: top
                .iter()
                .map(|zone| {
                    zone.iter()
                        .filter(|g| !g.is_graphite && !g.pebble_count.is_zero())
                        .map(|g| DischargeEntry {
                            pebble_count: g.pebble_count.as_f64(),
                            last_pass_burnup: g.last_pass_burnup,
                            total_burnup: g.mean_burnup,
                        })
                        .collect()
                })
                .collect(),
            discarded_count: 0.0,
            discarded_mean_burnup: 0.0,
            step_index: state.step_index + 1,
        };

        let pooled: Vec<BurnupGroup> = top.into_iter().flatten().collect();
        let regrouped = regroup_discharge(&pooled, MAX_BURNUP_GROUPS)?;
        let outcome = apply_discard(regrouped, controls.discard_threshold, self.config.discard_spread)?;
        discharge.discarded_count = outcome.discarded.as_f64();
        if !outcome.discarded.is_zero() {
            discharge.discarded_mean_burnup = outcome.discarded_burnup_sum / discharge.discarded_count;
        }
        let (bottom, _) = insert_fresh(&outcome.survivors, controls, n_radial, state.zone_capacity())?;

        let mut next_inventory = bottom;
        next_inventory.extend(inventory);
        let mut next = CoreState {
            grid: state.grid.clone(),
            inventory: next_inventory,
            step_index: state.step_index + 1,
            total_pebbles: state.total_pebbles,
            elapsed_days: state.elapsed_days + controls.timestep,
            rng_seed: state.rng_seed,
            power_fractions: Vec::new(),
            controls: *controls,
        };
        if next.total_count() != PebbleCount::whole(next.total_pebbles) {
            return Err(invalid_state!(
                "pebble total drifted to {} after step {}",
                next.total_count().as_f64(),
                next.step_index
            ));
        }

        let sol = self.solve(&next, controls, true);
        next.power_fractions = sol.power_fractions;
        let reactivity = compute_reactivity(sol.k_eff)?;
        Ok(StepResult {
            k_eff: sol.k_eff,
            reactivity,
            mesh: sol.mesh,
            discharge,
            state_after: next,
            dead_core: sol.dead_core,
        })
    }

    /// Steps through `plan`, returning every intermediate result.
    pub fn run(&self, state: &CoreState, plan: &[ControlVector]) -> Result<Vec<StepResult>> {
        let mut out: Vec<StepResult> = Vec::with_capacity(plan.len());
        for controls in plan {
            let current = out.last().map(|r| &r.state_after).unwrap_or(state);
            let r = self.advance_step(current, controls)?;
            out.push(r);
        }
        Ok(out)
    }
}
