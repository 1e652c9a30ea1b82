//! Handcrafted operation templates.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::StartKind;
use crate::sim::controls::{ControlKind, ControlVector, NOMINAL_TIMESTEP_D, ROD_PARKED_CM};

/// A named control plan and the state it starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTemplate {
    pub name: String,
    pub start: StartKind,
    pub plan: Vec<ControlVector>,
    pub held_out: bool,
}

/// Default template length in steps.
pub const TEMPLATE_LENGTH: usize = 200;

type Track<'a> = (ControlKind, &'a [(usize, f64)]);

/// Piecewise-linear keyframes per control; values hold before the first and
/// after the last keyframe. Controls without a track keep `base`.
fn plan_from(base: ControlVector, length: usize, tracks: &[Track<'_>]) -> Vec<ControlVector> {
    (0..length)
        .map(|t| {
            let mut c = base;
            for (kind, keys) in tracks {
                c.set(*kind, interpolate(keys, t));
            }
            c
        })
        .collect()
}

fn interpolate(keys: &[(usize, f64)], t: usize) -> f64 {
    if t <= keys[0].0 {
        return keys[0].1;
    }
    for w in keys.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        if t <= t1 {
            if t1 == t0 {
                return v1;
            }
            let v = v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64;
            return v.clamp(v0.min(v1), v0.max(v1));
        }
    }
    keys[keys.len() - 1].1
}

/// Staircase from `from` to `to` with `stairs` equal jumps between `t0`
/// and `t1`.
fn stairs(from: f64, to: f64, t0: usize, t1: usize, stairs: usize) -> Vec<(usize, f64)> {
    let mut keys = alloc::vec![(t0, from)];
    let span = (t1 - t0) / stairs;
    for i in 1..=stairs {
        let t = t0 + i * span;
        let prev = from + (to - from) * (i - 1) as f64 / stairs as f64;
        let next = from + (to - from) * i as f64 / stairs as f64;
        keys.push((t - 1, prev));
        keys.push((t, next));
    }
    keys
}

fn template(name: &str, start: StartKind, plan: Vec<ControlVector>) -> SequenceTemplate {
    SequenceTemplate {
        name: name.to_string(),
        start,
        plan,
        held_out: false,
    }
}

/// The fourteen shipped templates; the last one is held out from training.
pub fn handcrafted_library() -> Vec<SequenceTemplate> {
    handcrafted_library_with_length(TEMPLATE_LENGTH)
}

pub fn handcrafted_library_with_length(n: usize) -> Vec<SequenceTemplate> {
    use ControlKind::*;
    let s = ControlVector::runin_start();
    let f = ControlVector::benchmark();
    let at = |x: f64| ((n as f64) * x) as usize;
    let (p0, p1) = (s.power, f.power);
    let (g0, g1) = (s.graphite_fraction, f.graphite_fraction);
    let (r0, r1) = (s.rod_depth, f.rod_depth);
    let th = f.discard_threshold;
    let dt = NOMINAL_TIMESTEP_D;

    let mut lib = alloc::vec![
        template(
            "runin-linear",
            StartKind::Runin,
            plan_from(s, n, &[
                (Power, &[(0, p0), (at(0.75), p1)]),
                (GraphiteFraction, &[(0, g0), (at(0.75), g1)]),
                (RodDepth, &[(0, r0), (at(0.75), r1)]),
            ]),
        ),
        template(
            "runin-fast",
            StartKind::Runin,
            plan_from(s, n, &[
                (Power, &[(0, p0), (at(0.3), p1)]),
                (GraphiteFraction, &[(0, g0), (at(0.3), g1)]),
                (RodDepth, &[(0, r0), (at(0.3), r1)]),
            ]),
        ),
        template(
            "runin-power-first",
            StartKind::Runin,
            plan_from(s, n, &[
                (Power, &[(0, p0), (at(0.4), p1)]),
                (GraphiteFraction, &[(at(0.2), g0), (at(0.7), g1)]),
                (RodDepth, &[(at(0.4), r0), (at(0.8), r1)]),
            ]),
        ),
        template(
            "runin-fuel-first",
            StartKind::Runin,
            plan_from(s, n, &[
                (GraphiteFraction, &[(0, g0), (at(0.4), g1)]),
                (Power, &[(at(0.2), p0), (at(0.7), p1)]),
                (RodDepth, &[(at(0.3), r0), (at(0.9), r1)]),
            ]),
        ),
        template(
            "runin-staircase",
            StartKind::Runin,
            plan_from(s, n, &[
                (Power, &stairs(p0, p1, 0, at(0.8), 8)),
                (GraphiteFraction, &stairs(g0, g1, 0, at(0.8), 8)),
                (RodDepth, &[(0, r0), (at(0.8), r1)]),
            ]),
        ),
        template(
            "runin-late-rods",
            StartKind::Runin,
            plan_from(s, n, &[
                (Power, &[(0, p0), (at(0.5), p1)]),
                (GraphiteFraction, &[(0, g0), (at(0.5), g1)]),
                (RodDepth, &[(at(0.5), r0), (at(0.95), r1)]),
            ]),
        ),
        template(
            "rod-sweep",
            StartKind::Equilibrium,
            plan_from(f, n, &[(RodDepth, &[(at(0.1), r1), (at(0.45), ROD_PARKED_CM), (at(0.55), ROD_PARKED_CM), (at(0.9), r1)])]),
        ),
        template(
            "threshold-sweep",
            StartKind::Equilibrium,
            plan_from(f, n, &[(DiscardThreshold, &[(at(0.1), th), (at(0.35), 16.0), (at(0.65), 22.0), (at(0.9), th)])]),
        ),
        template(
            "circulation-sweep",
            StartKind::Equilibrium,
            plan_from(f, n, &[(Timestep, &[(at(0.1), dt), (at(0.35), 4.0), (at(0.65), 10.0), (at(0.9), dt)])]),
        ),
        template(
            "graphite-sweep",
            StartKind::Equilibrium,
            plan_from(f, n, &[(GraphiteFraction, &[(at(0.1), 0.0), (at(0.4), 0.4), (at(0.6), 0.4), (at(0.9), 0.0)])]),
        ),
        template(
            "power-sweep",
            StartKind::Equilibrium,
            plan_from(f, n, &[(Power, &[(at(0.1), p1), (at(0.4), 140_000.0), (at(0.6), 140_000.0), (at(0.9), p1)])]),
        ),
        template(
            "power-rod",
            StartKind::Equilibrium,
            plan_from(f, n, &[
                (Power, &[(at(0.1), p1), (at(0.4), 180_000.0), (at(0.7), 180_000.0), (at(0.9), p1)]),
                (RodDepth, &[(at(0.1), r1), (at(0.4), 200.0), (at(0.7), 200.0), (at(0.9), r1)]),
            ]),
        ),
        template(
            "threshold-circulation",
            StartKind::Equilibrium,
            plan_from(f, n, &[
                (DiscardThreshold, &[(at(0.1), th), (at(0.5), 21.0), (at(0.9), 17.5)]),
                (Timestep, &[(at(0.1), dt), (at(0.5), 8.5), (at(0.9), 5.0)]),
            ]),
        ),
    ];
    let mut holdout = template(
        "holdout-runin",
        StartKind::Runin,
        plan_from(s, n, &[
            (Power, &stairs(p0, p1, 0, at(0.4), 4)),
            (GraphiteFraction, &stairs(g0, g1, 0, at(0.4), 4)),
            (RodDepth, &[(0, r0), (at(0.6), r1)]),
        ]),
    );
    holdout.held_out = true;
    lib.push(holdout);
    lib
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_shape() {
        let lib = handcrafted_library();
        assert_eq!(lib.len(), 14);
        assert_eq!(lib.iter().filter(|t| t.held_out).count(), 1);
        for t in &lib {
            assert_eq!(t.plan.len(), TEMPLATE_LENGTH);
            for c in &t.plan {
                c.validate().unwrap();
            }
        }
        let runin = &lib[0];
        assert_eq!(runin.plan[0].graphite_fraction, 0.8879);
        assert_eq!(runin.plan[0].power, 10.0);
    }

    #[test]
    fn rod_sweep_moves_only_rods() {
        let lib = handcrafted_library();
        let t = lib.iter().find(|t| t.name == "rod-sweep").unwrap();
        let first = t.plan[0];
        let mut moved = false;
        for c in &t.plan {
            for kind in ControlKind::ALL {
                if kind == ControlKind::RodDepth {
                    moved |= c.rod_depth != first.rod_depth;
                } else {
                    assert_eq!(c.get(kind), first.get(kind));
                }
            }
        }
        assert!(moved);
    }

    #[test]
    fn stairs_reach_the_target() {
        let k = stairs(0.0, 8.0, 0, 80, 4);
        assert_eq!(interpolate(&k, 0), 0.0);
        assert_eq!(interpolate(&k, 19), 0.0);
        assert_eq!(interpolate(&k, 20), 2.0);
        assert_eq!(interpolate(&k, 100), 8.0);
    }
}
