use core::iter::Sum;
use core::ops::{Add, AddAssign, Sub};

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Pebble count in fixed point (1/65536 pebble).
///
/// Zone averaging produces fractional pebbles; integer fixed point keeps the
/// core-wide total exactly conserved through discard, regrouping and
/// reinsertion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PebbleCount(u64);

impl PebbleCount {
    pub const SCALE: u64 = 1 << 16;
    pub const ZERO: Self = Self(0);

    pub const fn from_raw(raw: u64) -> Self {
        Self(raw)
    }

    pub const fn whole(pebbles: u64) -> Self {
        Self(pebbles * Self::SCALE)
    }

    /// Nearest representable count; negative or non-finite input maps to zero.
    pub fn from_pebbles(pebbles: f64) -> Self {
        if !(pebbles > 0.0) || !pebbles.is_finite() {
            return Self::ZERO;
        }
        Self(libm::round(pebbles * Self::SCALE as f64) as u64)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// `round(fraction * self)`, never exceeding `self`.
    pub fn fraction(self, fraction: f64) -> Self {
        let f = fraction.clamp(0.0, 1.0);
        let part = libm::round(self.0 as f64 * f) as u64;
        Self(part.min(self.0))
    }

    /// Splits into `n` parts whose raw values differ by at most one unit and
    /// sum exactly to `self`. Remainder units go to the leading parts.
    pub fn split_even(self, n: usize) -> Vec<Self> {
        assert!(n > 0);
        let base = self.0 / n as u64;
        let rem = (self.0 % n as u64) as usize;
        (0..n).map(|i| Self(base + u64::from(i < rem))).collect()
    }

    pub fn checked_sub(self, rhs: Self) -> Option<Self> {
        self.0.checked_sub(rhs.0).map(Self)
    }

    pub fn div_exact(self, n: u64) -> Option<Self> {
        (self.0 % n == 0).then(|| Self(self.0 / n))
    }
}

impl Add for PebbleCount {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl AddAssign for PebbleCount {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Sub for PebbleCount {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Sum for PebbleCount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a PebbleCount> for PebbleCount {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

/// A set of pebbles tracked together inside one zone.
///
/// `nuclide_summary` is a fissile-worth scalar in `[0, 1]` that stands in
/// for the full nuclide vector; it is averaged exactly like a concentration
/// when groups are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnupGroup {
    pub pebble_count: PebbleCount,
    /// Total burnup, %FIMA.
    pub mean_burnup: f64,
    /// Burnup accrued on the current pass, %FIMA.
    pub last_pass_burnup: f64,
    pub nuclide_summary: f64,
    pub is_graphite: bool,
}

impl BurnupGroup {
    pub fn fresh_fuel(count: PebbleCount) -> Self {
        Self {
            pebble_count: count,
            mean_burnup: 0.0,
            last_pass_burnup: 0.0,
            nuclide_summary: 1.0,
            is_graphite: false,
        }
    }

    pub fn graphite(count: PebbleCount) -> Self {
        Self {
            pebble_count: count,
            mean_burnup: 0.0,
            last_pass_burnup: 0.0,
            nuclide_summary: 0.0,
            is_graphite: true,
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.mean_burnup.is_finite()
            && self.last_pass_burnup.is_finite()
            && self.nuclide_summary.is_finite();
        let graphite_ok =
            !self.is_graphite || (self.mean_burnup == 0.0 && self.nuclide_summary == 0.0);
        finite
            && self.mean_burnup >= 0.0
            && self.last_pass_burnup >= 0.0
            && (0.0..=1.0).contains(&self.nuclide_summary)
            && graphite_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layer_capacity_divides_exactly() {
        let total = PebbleCount::whole(250_190);
        let layer = total.div_exact(10).unwrap();
        let zone = layer.div_exact(4).unwrap();
        assert_eq!(zone.as_f64(), 6254.75);
    }

    #[test]
    fn fraction_of_ten_thousand() {
        let v = PebbleCount::whole(10_000);
        let g = v.fraction(0.8879);
        assert!((g.as_f64() - 8879.0).abs() < 1e-4);
        assert!(((v - g).as_f64() - 1121.0).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn split_even_conserves(raw in 0u64..1u64 << 40, n in 1usize..16) {
            let c = PebbleCount::from_raw(raw);
            let parts = c.split_even(n);
            prop_assert_eq!(parts.iter().sum::<PebbleCount>(), c);
            let max = parts.iter().max().unwrap().raw();
            let min = parts.iter().min().unwrap().raw();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn fraction_never_exceeds_whole(raw in 0u64..1u64 << 40, f in -0.5f64..1.5) {
            let c = PebbleCount::from_raw(raw);
            prop_assert!(c.fraction(f) <= c);
        }
    }
}
