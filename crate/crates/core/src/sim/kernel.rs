//! Reduced-order neutronics kernel.
//!
//! A deterministic map from zone inventories and controls to `k_eff`, per-zone
//! power fractions and 20x8 power / 20x8x3 flux tallies, with optional
//! multiplicative tally noise and a reactivity jitter that mimic Monte Carlo
//! scatter. All coefficients come from [`KernelConstants`], which are loaded
//! from the versioned calibration file.

use alloc::vec;
use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grid::ZoneGrid;
use super::inventory::BurnupGroup;
use crate::error::{invalid_config, Result};
use crate::sim::controls::ControlVector;

pub const MESH_AXIAL: usize = 20;
pub const MESH_RADIAL: usize = 8;
pub const ENERGY_GROUPS: usize = 3;
pub const POWER_CELLS: usize = MESH_AXIAL * MESH_RADIAL;
pub const FLUX_CELLS: usize = POWER_CELLS * ENERGY_GROUPS;
/// Thermal/epithermal and epithermal/fast boundaries, eV.
pub const GROUP_BOUNDS_EV: [f64; 2] = [0.625, 1000.0];
/// `k_eff` reported for a core with no fissile material left.
pub const DEAD_CORE_KEFF: f64 = 1e-6;

/// Calibrated kernel coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    /// Infinite multiplication of fresh fuel.
    pub k_fresh: f64,
    /// Worth curve `1 - a1 x + a2 x^2`, `x = burnup / reference_burnup`.
    pub worth_linear: f64,
    pub worth_quadratic: f64,
    /// %FIMA
    pub reference_burnup: f64,
    pub non_leakage: f64,
    /// Zone multiplication scales as `(fuel fraction)^dilution_exponent`.
    pub dilution_exponent: f64,
    /// Fractional `k_eff` loss with rods fully inserted.
    pub rod_worth: f64,
    /// Weight of the S-shaped part of the rod worth curve, in [0, 1).
    pub rod_s_curve: f64,
    pub rod_parked_cm: f64,
    pub rod_max_cm: f64,
    /// Flux depression in the rodded region at the core periphery.
    pub rod_flux_suppression: f64,
    /// cm over which the rod depression ramps in below the tip.
    pub rod_tip_ramp_cm: f64,
    /// %FIMA per (kW d per pebble).
    pub burnup_per_kwd: f64,
    /// Exponent on the local-to-mean multiplication ratio shaping the flux.
    pub flux_feedback_exponent: f64,
    pub axial_extrapolation_cm: f64,
    pub radial_extrapolation_cm: f64,
    pub thermal_base: f64,
    pub epithermal_base: f64,
    pub graphite_thermal_shift: f64,
    pub reflector_thermal_boost: f64,
    pub fissile_hardening: f64,
    /// n/cm^2/s per unit normalized power density.
    pub flux_per_kw: f64,
}

/// Statistical noise emulation for the tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyNoise {
    pub power_rel: f64,
    pub flux_rel: f64,
    pub keff_jitter_pcm: f64,
}

impl KernelConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_fresh", self.k_fresh),
            ("reference_burnup", self.reference_burnup),
            ("non_leakage", self.non_leakage),
            ("burnup_per_kwd", self.burnup_per_kwd),
            ("flux_per_kw", self.flux_per_kw),
            ("rod_tip_ramp_cm", self.rod_tip_ramp_cm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid_config!("kernel constant `{name}` must be positive, got {v}"));
            }
        }
        if self.worth_linear * self.worth_linear < 4.0 * self.worth_quadratic {
            return Err(invalid_config!("worth curve must reach zero before its minimum"));
        }
        if !(0.0..1.0).contains(&self.rod_worth) || !(0.0..1.0).contains(&self.rod_s_curve) {
            return Err(invalid_config!("rod worth and S-curve weight must lie in [0, 1)"));
        }
        if self.rod_max_cm <= self.rod_parked_cm {
            return Err(invalid_config!("rod_max_cm must exceed rod_parked_cm"));
        }
        Ok(())
    }

    /// Fissile worth of fuel at `burnup`, monotone non-increasing, in [0, 1].
    pub fn worth(&self, burnup: f64) -> f64 {
        let x = burnup / self.reference_burnup;
        let (a1, a2) = (self.worth_linear, self.worth_quadratic);
        // zero crossing before the parabola minimum
        let root = if a2 > 0.0 {
            (a1 - libm::sqrt(a1 * a1 - 4.0 * a2)) / (2.0 * a2)
        } else {
            1.0 / a1
        };
        if x >= root {
            return 0.0;
        }
        (1.0 - a1 * x + a2 * x * x).clamp(0.0, 1.0)
    }

    pub fn k_inf(&self, burnup: f64) -> f64 {
        self.k_fresh * self.worth(burnup)
    }

    /// Rod multiplier `R(depth)`: 1 at or above the parked depth, strictly
    /// decreasing down to `1 - rod_worth` at full insertion.
    pub fn rod_factor(&self, rod_depth: f64) -> f64 {
        let x = self.rod_insertion(rod_depth);
        let s = x - libm::sin(core::f64::consts::TAU * x) / core::f64::consts::TAU;
        let shape = (1.0 - self.rod_s_curve) * x + self.rod_s_curve * s;
        1.0 - self.rod_worth * shape
    }

    /// Inserted fraction of the rod travel, in [0, 1].
    pub fn rod_insertion(&self, rod_depth: f64) -> f64 {
        ((rod_depth - self.rod_parked_cm) / (self.rod_max_cm - self.rod_parked_cm)).clamp(0.0, 1.0)
    }

    /// Multiplication of a zone from its fuel content.
    pub fn zone_multiplication(&self, zone: &ZoneContent) -> f64 {
        if zone.fuel <= 0.0 || zone.capacity <= 0.0 {
            return 0.0;
        }
        let mean_worth = zone.fissile / zone.fuel;
        let fuel_fraction = zone.fuel / zone.capacity;
        self.k_fresh * mean_worth * libm::pow(fuel_fraction, self.dilution_exponent)
    }
}

/// Power and flux tallies. Power is indexed `[axial][radial]`, flux
/// `[axial][radial][group]`, both flattened row-major with axial cell 0 at
/// the core bottom and radial cell 0 at the centre. Groups run thermal,
/// epithermal, fast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshTally {
    /// kW per cell.
    pub power: Vec<f64>,
    /// n/cm^2/s per cell and group.
    pub flux: Vec<f64>,
    pub group_bounds_ev: [f64; 2],
    pub rel_noise_power: f64,
    pub rel_noise_flux: f64,
}

impl MeshTally {
    pub fn zeros(noise: &TallyNoise) -> Self {
        Self {
            power: vec![0.0; POWER_CELLS],
            flux: vec![0.0; FLUX_CELLS],
            group_bounds_ev: GROUP_BOUNDS_EV,
            rel_noise_power: noise.power_rel,
            rel_noise_flux: noise.flux_rel,
        }
    }

    #[inline]
    pub fn power_index(axial: usize, radial: usize) -> usize {
        axial * MESH_RADIAL + radial
    }

    #[inline]
    pub fn flux_index(axial: usize, radial: usize, group: usize) -> usize {
        (axial * MESH_RADIAL + radial) * ENERGY_GROUPS + group
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }
}

/// Per-zone aggregates the kernel needs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZoneContent {
    pub capacity: f64,
    pub fuel: f64,
    pub graphite: f64,
    /// Sum of `count * nuclide_summary` over fuel groups.
    pub fissile: f64,
}

impl ZoneContent {
    pub fn of(groups: &[BurnupGroup]) -> Self {
        let mut z = ZoneContent::default();
        for g in groups {
            let n = g.pebble_count.as_f64();
            z.capacity += n;
            if g.is_graphite {
                z.graphite += n;
            } else {
                z.fuel += n;
                z.fissile += n * g.nuclide_summary;
            }
        }
        z
    }

    pub fn graphite_fraction(&self) -> f64 {
        if self.capacity > 0.0 { self.graphite / self.capacity } else { 0.0 }
    }

    pub fn fissile_density(&self) -> f64 {
        if self.capacity > 0.0 { self.fissile / self.capacity } else { 0.0 }
    }
}

/// Quadrature point: height, radius, relative volume weight.
#[derive(Debug, Clone, Copy)]
struct Point {
    h: f64,
    r: f64,
    weight: f64,
    zone: usize,
}

const CELL_SUB: usize = 3;
const ZONE_SUB: usize = 4;

/// Precomputed quadrature for one zone grid.
#[derive(Debug, Clone)]
pub struct KernelGeometry {
    grid: ZoneGrid,
    zone_points: Vec<Vec<Point>>,
    cell_points: Vec<Vec<Point>>,
    cell_volume: Vec<f64>,
}

impl KernelGeometry {
    pub fn new(grid: &ZoneGrid) -> Self {
        let mut zone_points = vec![Vec::new(); grid.n_zones()];
        for zone in 0..grid.n_zones() {
            let (a, r) = grid.zone_coords(zone);
            let (h0, h1) = (grid.axial_boundaries[a], grid.axial_boundaries[a + 1]);
            let (r0, r1) = (grid.radial_boundaries[r], grid.radial_boundaries[r + 1]);
            zone_points[zone] = tensor_points(grid, h0, h1, r0, r1, ZONE_SUB);
        }
        let mut cell_points = Vec::with_capacity(POWER_CELLS);
        let mut cell_volume = Vec::with_capacity(POWER_CELLS);
        let dh = grid.core_height / MESH_AXIAL as f64;
        let dr = grid.core_radius / MESH_RADIAL as f64;
        for a in 0..MESH_AXIAL {
            for r in 0..MESH_RADIAL {
                let (h0, h1) = (a as f64 * dh, (a + 1) as f64 * dh);
                let (r0, r1) = (r as f64 * dr, (r + 1) as f64 * dr);
                cell_points.push(tensor_points(grid, h0, h1, r0, r1, CELL_SUB));
                cell_volume.push(dh * core::f64::consts::PI * (r1 * r1 - r0 * r0));
            }
        }
        Self {
            grid: grid.clone(),
            zone_points,
            cell_points,
            cell_volume,
        }
    }

    pub fn grid(&self) -> &ZoneGrid {
        &self.grid
    }
}

/// Midpoint rule in height and in r^2 (equal-area sub-annuli), so each point
/// carries the same volume within its box.
fn tensor_points(grid: &ZoneGrid, h0: f64, h1: f64, r0: f64, r1: f64, n: usize) -> Vec<Point> {
    let mut pts = Vec::with_capacity(n * n);
    let w = 1.0 / (n * n) as f64;
    for i in 0..n {
        let h = h0 + (h1 - h0) * (i as f64 + 0.5) / n as f64;
        for j in 0..n {
            let s = r0 * r0 + (r1 * r1 - r0 * r0) * (j as f64 + 0.5) / n as f64;
            let r = libm::sqrt(s);
            let zone = grid.zone_id(grid.axial_zone_of(h), grid.radial_zone_of(r));
            pts.push(Point { h, r, weight: w, zone });
        }
    }
    pts
}

/// Kernel output before any reactivity bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutronicsSolution {
    pub k_eff: f64,
    pub mesh: MeshTally,
    pub power_fractions: Vec<f64>,
    pub dead_core: bool,
}

/// Noise-free and noisy evaluation of the kernel.
pub fn solve(
    geometry: &KernelGeometry,
    constants: &KernelConstants,
    noise: &TallyNoise,
    inventory: &[Vec<BurnupGroup>],
    controls: &ControlVector,
    rng: Option<&mut dyn rand::RngCore>,
) -> NeutronicsSolution {
    let grid = &geometry.grid;
    let zones: Vec<ZoneContent> = inventory.iter().map(|g| ZoneContent::of(g)).collect();
    let mult: Vec<f64> = zones.iter().map(|z| constants.zone_multiplication(z)).collect();
    let mean_mult = mult.iter().sum::<f64>() / mult.len() as f64;

    if !(mean_mult > 0.0) {
        return NeutronicsSolution {
            k_eff: DEAD_CORE_KEFF,
            mesh: MeshTally::zeros(noise),
            power_fractions: vec![0.0; grid.n_zones()],
            dead_core: true,
        };
    }

    let modulation: Vec<f64> = mult
        .iter()
        .map(|m| libm::pow(m / mean_mult, constants.flux_feedback_exponent))
        .collect();

    let shape = |p: &Point| fundamental_shape(grid, constants, p.h, p.r);
    let insertion = constants.rod_insertion(controls.rod_depth);
    let tip = grid.core_height - insertion * grid.core_height;
    let rod_suppression = |p: &Point| {
        let ramp = ((p.h - tip) / constants.rod_tip_ramp_cm).clamp(0.0, 1.0);
        let rr = p.r / grid.core_radius;
        constants.rod_flux_suppression * ramp * rr * rr
    };

    // k_eff: importance-weighted zone multiplication with the unrodded shape;
    // rods enter only through R(depth).
    let mut num = 0.0;
    let mut den = 0.0;
    let mut zone_flux = vec![0.0; grid.n_zones()];
    for (z, pts) in geometry.zone_points.iter().enumerate() {
        let mut unrodded = 0.0;
        let mut rodded = 0.0;
        for p in pts {
            let s = shape(p) * modulation[z] * p.weight;
            unrodded += s;
            rodded += s * (1.0 - rod_suppression(p));
        }
        num += unrodded * unrodded * mult[z];
        den += unrodded * unrodded;
        zone_flux[z] = rodded;
    }
    let k_clean = constants.non_leakage * (num / den) * constants.rod_factor(controls.rod_depth);

    let zone_power: Vec<f64> = zone_flux
        .iter()
        .zip(&zones)
        .map(|(phi, z)| phi * z.fissile_density())
        .collect();
    let zone_total: f64 = zone_power.iter().sum();
    let power_fractions: Vec<f64> = zone_power.iter().map(|p| p / zone_total).collect();

    let mut mesh = MeshTally::zeros(noise);
    let mut cell_flux = vec![[0.0; ENERGY_GROUPS]; POWER_CELLS];
    let mut cell_power = vec![0.0; POWER_CELLS];
    for (c, pts) in geometry.cell_points.iter().enumerate() {
        let vol = geometry.cell_volume[c];
        for p in pts {
            let zc = &zones[p.zone];
            let supp = rod_suppression(p);
            let phi = shape(p) * modulation[p.zone] * (1.0 - supp) * p.weight;
            cell_power[c] += phi * zc.fissile_density() * vol;
            let split = spectrum(constants, zc, p.r / grid.core_radius, supp);
            for g in 0..ENERGY_GROUPS {
                cell_flux[c][g] += phi * split[g];
            }
        }
    }
    let power_norm: f64 = cell_power.iter().sum();
    let scale = controls.power / power_norm;
    let flux_scale = constants.flux_per_kw * controls.power / power_norm;
    for c in 0..POWER_CELLS {
        mesh.power[c] = cell_power[c] * scale;
        for g in 0..ENERGY_GROUPS {
            mesh.flux[c * ENERGY_GROUPS + g] = cell_flux[c][g] * flux_scale;
        }
    }

    let mut k_eff = k_clean;
    if let Some(rng) = rng {
        for v in mesh.power.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v = (*v * (1.0 + noise.power_rel * e)).max(0.0);
        }
        for v in mesh.flux.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v = (*v * (1.0 + noise.flux_rel * e)).max(0.0);
        }
        let e: f64 = StandardNormal.sample(rng);
        let rho = (k_clean - 1.0) / k_clean + noise.keff_jitter_pcm * 1e-5 * e;
        k_eff = 1.0 / (1.0 - rho);
    }

    NeutronicsSolution {
        k_eff,
        mesh,
        power_fractions,
        dead_core: false,
    }
}

/// Axial cosine times radial J0 with extrapolation lengths.
fn fundamental_shape(grid: &ZoneGrid, k: &KernelConstants, h: f64, r: f64) -> f64 {
    let he = grid.core_height + 2.0 * k.axial_extrapolation_cm;
    let re = grid.core_radius + k.radial_extrapolation_cm;
    let axial = libm::cos(core::f64::consts::PI * (h - 0.5 * grid.core_height) / he);
    let radial = libm::j0(2.404_825_557_695_773 * r / re);
    axial * radial
}

/// Thermal / epithermal / fast split at one point.
fn spectrum(k: &KernelConstants, zone: &ZoneContent, rel_radius: f64, rod_supp: f64) -> [f64; 3] {
    let mut thermal = k.thermal_base + k.graphite_thermal_shift * zone.graphite_fraction()
        + k.reflector_thermal_boost * libm::pow(rel_radius, 4.0)
        - k.fissile_hardening * zone.fissile_density();
    thermal = thermal.clamp(0.05, 0.9) * (1.0 - 0.5 * rod_supp);
    let epithermal = k.epithermal_base * (1.0 + 0.25 * rod_supp);
    let fast = (1.0 - thermal - epithermal).max(0.05);
    let sum = thermal + epithermal + fast;
    [thermal / sum, epithermal / sum, fast / sum]
}
