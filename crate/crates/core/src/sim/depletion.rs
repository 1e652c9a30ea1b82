//! Depletion, discharge regrouping, discard and fresh insertion.

use alloc::vec;
use alloc::vec::Vec;

use super::inventory::{BurnupGroup, PebbleCount};
use super::kernel::KernelConstants;
use crate::error::{invalid_config, invalid_input, invalid_state, Result};
use crate::math::normal_sf;
use crate::sim::controls::ControlVector;

/// Spread of pebble burnup around a group mean, as a fraction of the mean.
pub const DISCARD_SPREAD: f64 = 0.02288;
/// Upper bound on non-graphite groups produced by one regrouping.
pub const MAX_BURNUP_GROUPS: usize = 12;
/// First bin count tried by the regrouping search.
const REGROUP_START_BINS: usize = 24;

/// Fraction of a group removed at discharge: `P(B >= threshold)` with
/// `B ~ Normal(mean, (c * mean)^2)`.
pub fn discard_fraction(mean_burnup: f64, threshold: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(invalid_config!("discard spread c must be positive, got {c}"));
    }
    if !(threshold > 0.0) {
        return Err(invalid_input!("discard threshold must be positive, got {threshold}"));
    }
    if !(mean_burnup > 0.0) {
        if mean_burnup == 0.0 {
            return Ok(0.0);
        }
        return Err(invalid_input!("mean burnup must be non-negative, got {mean_burnup}"));
    }
    let z = (threshold - mean_burnup) / (c * mean_burnup);
    Ok(normal_sf(z))
}

/// Burns every fuel group for one step.
///
/// Zone `z` receives `power_fractions[z] * power * timestep` kW d, shared
/// equally by its fuel pebbles. Fractions that land on zones without fuel are
/// handed to the fuelled zones in proportion to their own fractions.
pub fn deplete_zones(
    inventory: &mut [Vec<BurnupGroup>],
    controls: &ControlVector,
    power_fractions: &[f64],
    constants: &KernelConstants,
) -> Result<()> {
    if power_fractions.len() != inventory.len() {
        return Err(invalid_input!(
            "{} power fractions for {} zones",
            power_fractions.len(),
            inventory.len()
        ));
    }
    let total: f64 = power_fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 && total != 0.0 {
        return Err(invalid_input!("power fractions sum to {total}, expected 1"));
    }
    if controls.power <= 0.0 || total == 0.0 {
        return Ok(());
    }
    let fuel: Vec<f64> = inventory
        .iter()
        .map(|groups| {
            groups
                .iter()
                .filter(|g| !g.is_graphite)
                .map(|g| g.pebble_count.as_f64())
                .sum()
        })
        .collect();
    let fuelled: f64 = power_fractions
        .iter()
        .zip(&fuel)
        .filter(|(_, &n)| n > 0.0)
        .map(|(f, _)| f)
        .sum();
    if fuelled <= 0.0 {
        return Ok(());
    }
    let energy = controls.power * controls.timestep;
    for (z, groups) in inventory.iter_mut().enumerate() {
        if fuel[z] <= 0.0 {
            continue;
        }
        let share = power_fractions[z] / fuelled;
        let delta = constants.burnup_per_kwd * share * energy / fuel[z];
        for g in groups.iter_mut().filter(|g| !g.is_graphite) {
            let before = constants.worth(g.mean_burnup);
            g.mean_burnup += delta;
            g.last_pass_burnup += delta;
            let after = constants.worth(g.mean_burnup);
            g.nuclide_summary = (g.nuclide_summary - (before - after)).max(0.0);
        }
    }
    Ok(())
}

/// Merges discharged groups into at most `max_groups` evenly spaced burnup
/// bins, averaging burnups and the nuclide summary with pebble-count weights.
///
/// The bin count is searched downward from 24 until no more than
/// `max_groups` bins are occupied. Graphite is merged into one trailing
/// group and never binned.
pub fn regroup_discharge(discharged: &[BurnupGroup], max_groups: usize) -> Result<Vec<BurnupGroup>> {
    if discharged.is_empty() {
        return Err(invalid_input!("nothing to regroup"));
    }
    if max_groups == 0 {
        return Err(invalid_config!("max_groups must be positive"));
    }
    let graphite: PebbleCount = discharged
        .iter()
        .filter(|g| g.is_graphite)
        .map(|g| g.pebble_count)
        .sum();
    let fuel: Vec<&BurnupGroup> = discharged
        .iter()
        .filter(|g| !g.is_graphite && !g.pebble_count.is_zero())
        .collect();

    let mut out = Vec::new();
    if fuel.len() == 1 {
        out.push(fuel[0].clone());
    } else if !fuel.is_empty() {
        let lo = fuel.iter().map(|g| g.mean_burnup).fold(f64::INFINITY, f64::min);
        let hi = fuel.iter().map(|g| g.mean_burnup).fold(f64::NEG_INFINITY, f64::max);
        let n_bins = choose_bin_count(&fuel, lo, hi, max_groups);
        let mut acc = vec![BinAcc::default(); n_bins];
        for g in &fuel {
            acc[bin_of(g.mean_burnup, lo, hi, n_bins)].add(g);
        }
        out.extend(acc.into_iter().filter_map(BinAcc::finish));
    }
    if !graphite.is_zero() || out.is_empty() {
        out.push(BurnupGroup::graphite(graphite));
    }
    Ok(out)
}

fn bin_of(b: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let idx = ((b - lo) / (hi - lo) * n as f64) as usize;
    idx.min(n - 1)
}

fn choose_bin_count(fuel: &[&BurnupGroup], lo: f64, hi: f64, max_groups: usize) -> usize {
    if hi <= lo {
        return 1;
    }
    let start = REGROUP_START_BINS.max(max_groups);
    for n in (1..=start).rev() {
        let mut used = vec![false; n];
        for g in fuel {
            used[bin_of(g.mean_burnup, lo, hi, n)] = true;
        }
        if used.iter().filter(|&&u| u).count() <= max_groups {
            return n;
        }
    }
    1
}

#[derive(Debug, Clone, Default)]
struct BinAcc {
    count: PebbleCount,
    burnup: f64,
    last_pass: f64,
    summary: f64,
}

impl BinAcc {
    fn add(&mut self, g: &BurnupGroup) {
        let n = g.pebble_count.as_f64();
        self.count += g.pebble_count;
        self.burnup += n * g.mean_burnup;
        self.last_pass += n * g.last_pass_burnup;
        self.summary += n * g.nuclide_summary;
    }

    fn finish(self) -> Option<BurnupGroup> {
        if self.count.is_zero() {
            return None;
        }
        let n = self.count.as_f64();
        Some(BurnupGroup {
            pebble_count: self.count,
            mean_burnup: self.burnup / n,
            last_pass_burnup: self.last_pass / n,
            nuclide_summary: self.summary / n,
            is_graphite: false,
        })
    }
}

/// Outcome of applying the discard rule to regrouped fuel.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscardOutcome {
    pub survivors: Vec<BurnupGroup>,
    pub discarded: PebbleCount,
    pub discarded_burnup_sum: f64,
}

/// Removes `discard_fraction` of every fuel group; graphite is dropped here
/// too (dummy pebbles are sorted out at discharge and replaced through the
/// insertion mix).
pub fn apply_discard(groups: Vec<BurnupGroup>, threshold: f64, c: f64) -> Result<DiscardOutcome> {
    let mut survivors = Vec::with_capacity(groups.len());
    let mut discarded = PebbleCount::ZERO;
    let mut discarded_burnup_sum = 0.0;
    for mut g in groups {
        if g.is_graphite {
            continue;
        }
        let f = discard_fraction(g.mean_burnup, threshold, c)?;
        let removed = g.pebble_count.fraction(f);
        discarded += removed;
        discarded_burnup_sum += removed.as_f64() * g.mean_burnup;
        g.pebble_count = g.pebble_count - removed;
        if !g.pebble_count.is_zero() {
            survivors.push(g);
        }
    }
    Ok(DiscardOutcome {
        survivors,
        discarded,
        discarded_burnup_sum,
    })
}

/// Refills the bottom layer: survivors spread evenly over the radial zones
/// with their pass burnup reset, and every zone topped up to `zone_capacity`
/// with fresh pebbles split `graphite_fraction : 1 - graphite_fraction`.
///
/// Returns the new bottom-layer zones and the number of fresh pebbles.
pub fn insert_fresh(
    survivors: &[BurnupGroup],
    controls: &ControlVector,
    n_radial: usize,
    zone_capacity: PebbleCount,
) -> Result<(Vec<Vec<BurnupGroup>>, PebbleCount)> {
    let mut layer: Vec<Vec<BurnupGroup>> = vec![Vec::new(); n_radial];
    // Remainder units rotate across zones so zone totals differ by at most
    // one fixed-point unit.
    let mut offset = 0usize;
    let n = n_radial as u64;
    for g in survivors {
        let raw = g.pebble_count.raw();
        let (base, rem) = (raw / n, (raw % n) as usize);
        for (r, zone) in layer.iter_mut().enumerate() {
            let extra = u64::from((r + n_radial - offset) % n_radial < rem);
            let part = PebbleCount::from_raw(base + extra);
            if part.is_zero() {
                continue;
            }
            zone.push(BurnupGroup {
                pebble_count: part,
                last_pass_burnup: 0.0,
                ..g.clone()
            });
        }
        offset = (offset + rem) % n_radial;
    }
    let mut fresh_total = PebbleCount::ZERO;
    for zone in layer.iter_mut() {
        let occupied: PebbleCount = zone.iter().map(|g| g.pebble_count).sum();
        let vacancies = zone_capacity.checked_sub(occupied).ok_or_else(|| {
            invalid_state!(
                "reinserted pebbles ({}) exceed zone capacity ({})",
                occupied.as_f64(),
                zone_capacity.as_f64()
            )
        })?;
        if vacancies.is_zero() {
            continue;
        }
        let graphite = vacancies.fraction(controls.graphite_fraction);
        let fuel = vacancies - graphite;
        if !fuel.is_zero() {
            zone.push(BurnupGroup::fresh_fuel(fuel));
        }
        if !graphite.is_zero() {
            zone.push(BurnupGroup::graphite(graphite));
        }
        fresh_total += vacancies;
    }
    Ok((layer, fresh_total))
}

/// Splits `vacancies` fresh pebbles by the graphite fraction.
pub fn fresh_split(vacancies: PebbleCount, graphite_fraction: f64) -> (PebbleCount, PebbleCount) {
    let graphite = vacancies.fraction(graphite_fraction);
    (graphite, vacancies - graphite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn group(count: f64, burnup: f64, summary: f64) -> BurnupGroup {
        BurnupGroup {
            pebble_count: PebbleCount::from_pebbles(count),
            mean_burnup: burnup,
            last_pass_burnup: burnup / 8.0,
            nuclide_summary: summary,
            is_graphite: false,
        }
    }

    #[test]
    fn discard_fraction_symmetry_and_limits() {
        assert_eq!(discard_fraction(19.0, 19.0, DISCARD_SPREAD).unwrap(), 0.5);
        assert!(discard_fraction(9.5, 19.0, DISCARD_SPREAD).unwrap() < 1e-12);
        assert!(discard_fraction(5.0, 1.0, DISCARD_SPREAD).unwrap() == 1.0);
        assert!(discard_fraction(10.0, 10.0, 0.0).is_err());
        assert!(discard_fraction(10.0, 10.0, -0.1).is_err());
    }

    #[test]
    fn discard_fraction_matches_high_precision_oracle() {
        // mpmath, 40 digits: 1 - ncdf((180 - 185) / (0.02288 * 185))
        let f = discard_fraction(185.0, 180.0, DISCARD_SPREAD).unwrap();
        assert_relative_eq!(f, 0.881_248_522_703_250_2, max_relative = 1e-12);
        // mu / T = 0.95 and 1.05 with T = 19
        assert_relative_eq!(
            discard_fraction(0.95 * 19.0, 19.0, DISCARD_SPREAD).unwrap(),
            0.010_714_730_329_262_5,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            discard_fraction(1.05 * 19.0, 19.0, DISCARD_SPREAD).unwrap(),
            0.981_294_580_636_134_4,
            max_relative = 1e-12
        );
    }

    #[test]
    fn merged_summary_is_count_weighted() {
        let merged = regroup_discharge(&[group(1.0, 5.0, 4.0), group(3.0, 5.0, 0.0)], 12).unwrap();
        assert_eq!(merged.len(), 1);
        assert_relative_eq!(merged[0].nuclide_summary, 1.0);
        assert_eq!(merged[0].pebble_count, PebbleCount::whole(4));
    }

    #[test]
    fn single_group_is_identity() {
        let g = group(100.0, 7.0, 0.6);
        assert_eq!(regroup_discharge(&[g.clone()], 12).unwrap(), vec![g]);
    }

    #[test]
    fn all_graphite_returns_one_graphite_group() {
        let g = BurnupGroup::graphite(PebbleCount::whole(5));
        let h = BurnupGroup::graphite(PebbleCount::whole(7));
        let out = regroup_discharge(&[g, h], 12).unwrap();
        assert_eq!(out, vec![BurnupGroup::graphite(PebbleCount::whole(12))]);
    }

    /// Independent oracle: try every bin count from 24 down and keep the
    /// first whose occupied-bin count is at most 12.
    fn brute_force_bins(burnups: &[f64], max: usize) -> usize {
        let lo = burnups.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = burnups.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for n in (1..=24).rev() {
            let width = (hi - lo) / n as f64;
            let mut occupied = alloc::collections::BTreeSet::new();
            for &b in burnups {
                let mut k = libm::floor((b - lo) / width) as i64;
                if k >= n as i64 {
                    k = n as i64 - 1;
                }
                occupied.insert(k);
            }
            if occupied.len() <= max {
                return occupied.len();
            }
        }
        1
    }

    #[test]
    fn thirty_uniform_groups_make_twelve_bins() {
        let burnups: Vec<f64> = (0..30).map(|i| 21.0 * i as f64 / 29.0).collect();
        let groups: Vec<_> = burnups.iter().map(|&b| group(10.0 + b, b, 0.5)).collect();
        let out = regroup_discharge(&groups, 12).unwrap();
        assert_eq!(brute_force_bins(&burnups, 12), 12);
        assert_eq!(out.len(), 12);
        let before: PebbleCount = groups.iter().map(|g| g.pebble_count).sum();
        let after: PebbleCount = out.iter().map(|g| g.pebble_count).sum();
        assert_eq!(before, after);
    }

    #[test]
    fn fresh_split_matches_insertion_fraction() {
        let (g, f) = fresh_split(PebbleCount::whole(10_000), 0.8879);
        assert_relative_eq!(g.as_f64(), 8879.0, epsilon = 1e-4);
        assert_relative_eq!(f.as_f64(), 1121.0, epsilon = 1e-4);
        let (g, f) = fresh_split(PebbleCount::whole(100), 0.0);
        assert!(g.is_zero());
        assert_eq!(f, PebbleCount::whole(100));
    }

    #[test]
    fn insert_fresh_fills_every_zone() {
        let cap = PebbleCount::whole(1000);
        let survivors = vec![group(1001.0, 3.0, 0.8)];
        let controls = ControlVector::benchmark().with(crate::sim::controls::ControlKind::GraphiteFraction, 0.3);
        let (layer, fresh) = insert_fresh(&survivors, &controls, 4, cap).unwrap();
        for zone in &layer {
            assert_eq!(zone.iter().map(|g| g.pebble_count).sum::<PebbleCount>(), cap);
            assert!(zone.iter().all(|g| g.last_pass_burnup == 0.0));
        }
        assert_relative_eq!(fresh.as_f64(), 4000.0 - 1001.0, epsilon = 1e-9);
    }

    #[test]
    fn insert_fresh_without_vacancies_only_reinserts() {
        let cap = PebbleCount::whole(250);
        let survivors = vec![group(1000.0, 3.0, 0.8)];
        let (layer, fresh) = insert_fresh(&survivors, &ControlVector::benchmark(), 4, cap).unwrap();
        assert!(fresh.is_zero());
        assert!(layer.iter().all(|z| z.len() == 1 && z[0].mean_burnup == 3.0));
    }

    #[test]
    fn insert_fresh_rejects_overfull_layer() {
        let survivors = vec![group(5000.0, 3.0, 0.8)];
        assert!(insert_fresh(&survivors, &ControlVector::benchmark(), 4, PebbleCount::whole(1000)).is_err());
    }

    proptest! {
        #[test]
        fn regroup_preserves_counts_and_weighted_means(
            spec in proptest::collection::vec((1.0f64..5000.0, 0.0f64..25.0, 0.0f64..1.0), 1..60)
        ) {
            let groups: Vec<_> = spec.iter().map(|&(n, b, s)| group(n, b, s)).collect();
            let out = regroup_discharge(&groups, MAX_BURNUP_GROUPS).unwrap();
            prop_assert!(out.iter().filter(|g| !g.is_graphite).count() <= MAX_BURNUP_GROUPS);
            let count_in: PebbleCount = groups.iter().map(|g| g.pebble_count).sum();
            let count_out: PebbleCount = out.iter().map(|g| g.pebble_count).sum();
            prop_assert_eq!(count_in, count_out);
            let moment = |gs: &[BurnupGroup], f: fn(&BurnupGroup) -> f64| -> f64 {
                gs.iter().map(|g| g.pebble_count.as_f64() * f(g)).sum()
            };
            for f in [
                (|g: &BurnupGroup| g.mean_burnup) as fn(&BurnupGroup) -> f64,
                |g| g.last_pass_burnup,
                |g| g.nuclide_summary,
            ] {
                let a = moment(&groups, f);
                let b = moment(&out, f);
                prop_assert!((a - b).abs() <= 1e-12 * a.abs() + 1e-300);
            }
        }

        #[test]
        fn discard_fraction_is_monotone(t in 1.0f64..30.0, a in 0.01f64..60.0, b in 0.01f64..60.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let f_lo = discard_fraction(lo, t, DISCARD_SPREAD).unwrap();
            let f_hi = discard_fraction(hi, t, DISCARD_SPREAD).unwrap();
            prop_assert!(f_lo <= f_hi);
            prop_assert!((0.0..=1.0).contains(&f_lo));
        }
    }
}
