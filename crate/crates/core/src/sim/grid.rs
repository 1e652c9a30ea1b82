use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, Result};

/// Geometry inputs for the zone grid, as read from the calibration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_radial: usize,
    pub n_axial: usize,
    pub core_radius_cm: f64,
    pub core_height_cm: f64,
    pub total_pebbles: u64,
}

/// Radial and axial zone layout of the active core.
///
/// Radial boundaries are placed so every annulus has the same cross-section,
/// axial boundaries are equally spaced. Zone ids run radially within an
/// axial layer, layer 0 at the bottom: `id = axial * n_radial + radial`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneGrid {
    pub n_radial: usize,
    pub n_axial: usize,
    pub radial_boundaries: Vec<f64>,
    pub axial_boundaries: Vec<f64>,
    pub core_height: f64,
    pub core_radius: f64,
}

impl ZoneGrid {
    pub fn new(n_radial: usize, n_axial: usize, core_radius: f64, core_height: f64) -> Result<Self> {
        if n_radial < 1 || n_axial < 2 {
            return Err(invalid_config!(
                "zone grid needs n_radial >= 1 and n_axial >= 2, got {n_radial}x{n_axial}"
            ));
        }
        if !(core_radius > 0.0 && core_height > 0.0) {
            return Err(invalid_config!("core dimensions must be positive"));
        }
        let radial_boundaries = (0..=n_radial)
            .map(|i| core_radius * libm::sqrt(i as f64 / n_radial as f64))
            .collect();
        let axial_boundaries = (0..=n_axial)
            .map(|i| core_height * i as f64 / n_axial as f64)
            .collect();
        Ok(Self {
            n_radial,
            n_axial,
            radial_boundaries,
            axial_boundaries,
            core_height,
            core_radius,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(spec.n_radial, spec.n_axial, spec.core_radius_cm, spec.core_height_cm)
    }

    pub fn n_zones(&self) -> usize {
        self.n_radial * self.n_axial
    }

    #[inline]
    pub fn zone_id(&self, axial: usize, radial: usize) -> usize {
        axial * self.n_radial + radial
    }

    /// Axial layer and radial ring of a zone id.
    #[inline]
    pub fn zone_coords(&self, id: usize) -> (usize, usize) {
        (id / self.n_radial, id % self.n_radial)
    }

    pub fn radial_zone_of(&self, r: f64) -> usize {
        let frac = (r / self.core_radius).clamp(0.0, 1.0);
        let idx = (frac * frac * self.n_radial as f64) as usize;
        idx.min(self.n_radial - 1)
    }

    pub fn axial_zone_of(&self, h: f64) -> usize {
        let idx = (h / self.core_height * self.n_axial as f64) as usize;
        idx.min(self.n_axial - 1)
    }

    pub fn zone_area(&self, radial: usize) -> f64 {
        let (r0, r1) = (self.radial_boundaries[radial], self.radial_boundaries[radial + 1]);
        core::f64::consts::PI * (r1 * r1 - r0 * r0)
    }
}
