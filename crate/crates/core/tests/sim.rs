use approx::assert_relative_eq;
use pebble_core::sim::kernel::{MESH_AXIAL, MESH_RADIAL};
use pebble_core::sim::*;
use proptest::prelude::*;

fn config() -> SimConfig {
    toml::from_str(include_str!("../data/calibration.toml")).unwrap()
}

fn quiet() -> CoreSim {
    CoreSim::new(config()).unwrap().with_noise(false)
}

#[test]
fn reactivity_values() {
    assert_eq!(compute_reactivity(1.0).unwrap(), 0.0);
    assert_relative_eq!(compute_reactivity(1.005).unwrap(), 0.004_975_124_378_109_453, max_relative = 1e-13);
    assert_relative_eq!(compute_reactivity(0.995).unwrap(), -0.005_025_125_628_140_704, max_relative = 1e-13);
    assert!(compute_reactivity(0.0).is_err());
    assert!(compute_reactivity(-1.0).is_err());
}

#[test]
fn layers_shift_up_by_one() {
    let sim = quiet();
    let c = ControlVector::benchmark();
    let s = sim.staggered_state(&c, 8, c.discard_threshold, 4).unwrap();
    let r = sim.advance_step(&s, &c).unwrap();
    let n = s.grid.n_radial;
    for a in 0..s.grid.n_axial - 1 {
        for (before, after) in s.layer(a).iter().zip(r.state_after.layer(a + 1)) {
            let counts_before: Vec<_> = before.iter().map(|g| g.pebble_count).collect();
            let counts_after: Vec<_> = after.iter().map(|g| g.pebble_count).collect();
            assert_eq!(counts_before, counts_after);
            for (g0, g1) in before.iter().zip(after) {
                assert!(g1.mean_burnup >= g0.mean_burnup);
            }
        }
    }
    assert_eq!(r.discharge.n_radial(), n);
}

#[test]
fn zero_power_leaves_burnup_unchanged() {
    let sim = quiet();
    let c = ControlVector::benchmark();
    let s = sim.staggered_state(&c, 8, 10.0, 4).unwrap();
    let mut inv = s.inventory.clone();
    let zero = ControlVector { power: 0.0, ..c };
    depletion::deplete_zones(&mut inv, &zero, &s.power_fractions, sim.constants()).unwrap();
    assert_eq!(inv, s.inventory);
}

#[test]
fn single_zone_burnup_increment() {
    let sim = quiet();
    let mut inv = vec![vec![BurnupGroup::fresh_fuel(PebbleCount::whole(500))]];
    let c = ControlVector { power: 1000.0, timestep: 2.0, ..ControlVector::benchmark() };
    depletion::deplete_zones(&mut inv, &c, &[1.0], sim.constants()).unwrap();
    let kappa = sim.constants().burnup_per_kwd;
    assert_relative_eq!(inv[0][0].mean_burnup, kappa * 1000.0 * 2.0 / 500.0, max_relative = 1e-15);
    assert!(inv[0][0].nuclide_summary < 1.0);
}

#[test]
fn power_on_empty_zone_is_redistributed() {
    let sim = quiet();
    let mut inv = vec![
        vec![BurnupGroup::fresh_fuel(PebbleCount::whole(100))],
        vec![BurnupGroup::graphite(PebbleCount::whole(100))],
        vec![BurnupGroup::fresh_fuel(PebbleCount::whole(100))],
    ];
    let c = ControlVector { power: 1000.0, timestep: 1.0, ..ControlVector::benchmark() };
    depletion::deplete_zones(&mut inv, &c, &[0.25, 0.5, 0.25], sim.constants()).unwrap();
    let kappa = sim.constants().burnup_per_kwd;
    assert_relative_eq!(inv[0][0].mean_burnup, kappa * 500.0 / 100.0, max_relative = 1e-14);
    assert_eq!(inv[1][0].mean_burnup, 0.0);
}

#[test]
fn rods_parked_have_no_effect_and_insertion_lowers_k() {
    let sim = quiet();
    let k = sim.constants();
    assert_eq!(k.rod_factor(ROD_PARKED), 1.0);
    let c = ControlVector::benchmark();
    let s = sim.equilibrium_state(&c, 160, 0).unwrap();
    let mut last = f64::INFINITY;
    for i in 0..=200 {
        let depth = ROD_PARKED + (controls::ROD_MAX_CM - ROD_PARKED) * i as f64 / 200.0;
        let keff = sim.solve(&s, &c.with(ControlKind::RodDepth, depth), false).k_eff;
        assert!(keff < last, "k not decreasing at {depth}");
        last = keff;
    }
}

const ROD_PARKED: f64 = controls::ROD_PARKED_CM;

#[test]
fn fresh_core_power_mesh_is_separable_and_normalized() {
    let sim = quiet();
    let c = ControlVector { rod_depth: ROD_PARKED, graphite_fraction: 0.3, ..ControlVector::benchmark() };
    let s = sim.fresh_state(&c, 0).unwrap();
    let sol = sim.solve(&s, &c, false);
    assert_relative_eq!(sol.mesh.total_power(), c.power, max_relative = 1e-12);
    let p = |a: usize, r: usize| sol.mesh.power[MeshTally::power_index(a, r)];
    for a in 0..MESH_AXIAL {
        for r in 0..MESH_RADIAL {
            let lhs = p(a, r) * p(0, 0);
            let rhs = p(a, 0) * p(0, r);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        }
    }
    assert!(sol.mesh.power.iter().all(|&v| v > 0.0));
    assert!(sol.mesh.flux.iter().all(|&v| v > 0.0));
}

#[test]
fn noisy_mesh_stays_near_requested_power() {
    let sim = CoreSim::new(config()).unwrap();
    let c = ControlVector::benchmark();
    let mut s = sim.staggered_state(&c, 8, c.discard_threshold, 21).unwrap();
    let bound = 3.0 * 0.018 * c.power / (160f64).sqrt();
    let mut within = 0;
    for _ in 0..50 {
        let r = sim.advance_step(&s, &c).unwrap();
        assert!(r.mesh.power.iter().chain(&r.mesh.flux).all(|&v| v >= 0.0));
        if (r.mesh.total_power() - c.power).abs() <= bound {
            within += 1;
        }
        s = r.state_after;
    }
    assert!(within >= 48, "{within} of 50 steps inside the 3 sigma band");
}

#[test]
fn graphite_only_feed_kills_the_core() {
    let sim = quiet();
    let c = ControlVector::benchmark();
    let g = c.with(ControlKind::GraphiteFraction, 1.0);
    let mut s = sim.staggered_state(&c, 8, 12.0, 0).unwrap();
    let mut last = None;
    for _ in 0..120 {
        let r = sim.advance_step(&s, &g).unwrap();
        s = r.state_after.clone();
        last = Some(r);
    }
    let r = last.unwrap();
    assert!(r.k_eff < 0.1, "k_eff {}", r.k_eff);
    assert!(r.k_eff > 0.0);
    assert_eq!(s.total_count(), PebbleCount::whole(250_190));
}

#[test]
fn non_finite_controls_are_rejected() {
    let sim = quiet();
    let c = ControlVector::benchmark();
    let s = sim.fresh_state(&c, 0).unwrap();
    assert!(sim.advance_step(&s, &c.with(ControlKind::Power, f64::NAN)).is_err());
    assert!(sim.advance_step(&s, &c.with(ControlKind::Timestep, f64::INFINITY)).is_err());
    assert!(sim.advance_step(&s, &c.with(ControlKind::DiscardThreshold, -1.0)).is_err());
}

#[test]
fn replay_is_bit_identical_with_noise() {
    let sim = CoreSim::new(config()).unwrap();
    let c = ControlVector::benchmark();
    let s = sim.staggered_state(&c, 8, 15.0, 99).unwrap();
    let plan: Vec<_> = (0..30)
        .map(|i| c.with(ControlKind::Power, 200_000.0 + 1000.0 * i as f64))
        .collect();
    let a = sim.run(&s, &plan).unwrap();
    let b = sim.run(&s, &plan).unwrap();
    assert_eq!(a, b);
    let other_seed = CoreState { rng_seed: 100, ..s.clone() };
    let c2 = sim.run(&other_seed, &plan).unwrap();
    assert_ne!(a.last().unwrap().k_eff, c2.last().unwrap().k_eff);
}

#[test]
fn calibration_file_round_trips() {
    let cfg = config();
    cfg.validate().unwrap();
    let text = toml::to_string(&cfg).unwrap();
    let back: SimConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let bad = SimConfig { schema_version: 99, ..cfg };
    assert!(bad.validate().is_err());
}

fn random_controls() -> impl Strategy<Value = ControlVector> {
    (0.0f64..1.0, 1.0f64..330_000.0, 60.25f64..369.47, 0.5f64..13.0, 5.0f64..25.0).prop_map(
        |(g, p, d, t, th)| ControlVector {
            graphite_fraction: g,
            power: p,
            rod_depth: d,
            timestep: t,
            discard_threshold: th,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_plans_conserve_pebbles_and_burnup_order(
        plan in proptest::collection::vec(random_controls(), 10..40),
        seed in any::<u64>(),
    ) {
        let sim = CoreSim::new(config()).unwrap();
        let mut s = sim.fresh_state(&ControlVector::runin_start(), seed).unwrap();
        for c in &plan {
            let r = sim.advance_step(&s, c).unwrap();
            prop_assert_eq!(r.state_after.total_count(), PebbleCount::whole(250_190));
            r.state_after.validate().unwrap();
            prop_assert!(r.k_eff > 0.0);
            prop_assert_eq!(r.reactivity, (r.k_eff - 1.0) / r.k_eff);
            prop_assert!(r.discharge.is_valid());
            let n_axial = s.grid.n_axial;
            for a in 0..n_axial - 1 {
                for (before, after) in s.layer(a).iter().zip(r.state_after.layer(a + 1)) {
                    for (g0, g1) in before.iter().zip(after) {
                        prop_assert!(g1.mean_burnup >= g0.mean_burnup);
                        prop_assert!(g1.nuclide_summary <= g0.nuclide_summary);
                    }
                }
            }
            s = r.state_after;
        }
    }
}
