use pebble_core::analysis::{forecast, FuelLedger, Surrogate};
use pebble_core::features::{NoisePolicy, N_FEATURES};
use pebble_core::runin::*;
use pebble_core::sequence::{StartStates, StepRecord, Target, WINDOW};
use pebble_core::sim::{ControlVector, CoreSim, CoreState, SimConfig};
use pebble_core::Result;

fn sim() -> CoreSim {
    let cfg: SimConfig = toml::from_str(include_str!("../data/calibration.toml")).unwrap();
    CoreSim::new(cfg).unwrap()
}

/// Linear in rod index only: zero at index 300.
struct RodStub {
    queries: usize,
}

impl ReactivityPredictor for RodStub {
    fn history_needed(&self) -> usize {
        0
    }
    fn begin_step(&mut self, _: &[StepRecord], _: &CoreState) -> Result<()> {
        Ok(())
    }
    fn predict(&mut self, c: &ControlVector) -> Result<f64> {
        self.queries += 1;
        let i = (c.rod_depth - 60.25) / 0.30922;
        Ok(3000.0 - 10.0 * i)
    }
}

#[test]
fn bisection_on_a_monotone_stub_meets_tolerance() {
    let sched = GoalSchedule::reference(1);
    let mut stub = RodStub { queries: 0 };
    let choice = choose_controls(&mut stub, &sched, &GridPoint::default()).unwrap();
    assert!(choice.within_tolerance, "{choice:?}");
    assert!(choice.predicted_pcm.abs() <= 50.0);
    assert_eq!(choice.queries, stub.queries);
    // rho0, three sign probes and the minimum advance, then at most
    // log2(1000) + 1 probes for each of trim, rods and trim again.
    let per_control = (1000f64.log2() + 1.0).floor() as usize;
    assert!(choice.queries <= 5 + 3 * per_control, "{} queries", choice.queries);
    assert!((295..=305).contains(&choice.point.rod), "{:?}", choice.point);
    assert!(choice.queries <= sched.query_budget);
}

/// Always predicts zero.
struct Calm;

impl ReactivityPredictor for Calm {
    fn history_needed(&self) -> usize {
        0
    }
    fn begin_step(&mut self, _: &[StepRecord], _: &CoreState) -> Result<()> {
        Ok(())
    }
    fn predict(&mut self, _: &ControlVector) -> Result<f64> {
        Ok(0.0)
    }
}

#[test]
fn fixed_point_at_goal_leaves_controls_unchanged() {
    let sched = GoalSchedule::reference(40);
    let goal = sched.final_point();
    let c = choose_controls(&mut Calm, &sched, &goal).unwrap();
    assert_eq!(c.point, goal);
    assert_eq!(c.controls, sched.controls(&goal));
}

#[test]
fn minimum_advance_and_monotone_moves() {
    let sched = GoalSchedule::reference(40);
    let mut at = GridPoint::default();
    for _ in 0..10 {
        let c = choose_controls(&mut Calm, &sched, &at).unwrap();
        let advanced: usize = GoalControl::ALL.iter().map(|g| g.index(&c.point) - g.index(&at)).sum();
        assert!(advanced >= 40);
        // Helpful-or-neutral order favours power.
        assert!(c.point.power >= at.power && c.point.graphite >= at.graphite && c.point.rod >= at.rod);
        assert_eq!(c.controls, sched.controls(&c.point));
        at = c.point;
    }
    assert_eq!(at.power, 400);
}

#[test]
fn goals_met_at_start_give_an_empty_record() {
    let sim = sim();
    let start = sim.fresh_state(&ControlVector::runin_start(), 0).unwrap();
    let mut sched = GoalSchedule::reference(40);
    for g in [&mut sched.power, &mut sched.graphite, &mut sched.rod] {
        *g = ControlGrid { start: g.start, end: g.start, points: 0 };
    }
    sched.validate().unwrap();
    let out = run_iteration(&sim, &start, &mut Calm, &sched, &IterationSettings::new(5, NoisePolicy::default()), 0).unwrap();
    assert!(out.record.goals_reached);
    assert!(out.record.steps.is_empty() && out.sequence.records.is_empty());
    assert_eq!(out.final_state, start);

    let bad = GoalSchedule {
        power: ControlGrid { start: 10.0, end: 20.0, points: 0 },
        ..GoalSchedule::reference(40)
    };
    assert!(bad.validate().is_err());
}

/// Returns a huge positive reactivity whatever the controls.
struct Runaway;

impl ReactivityPredictor for Runaway {
    fn history_needed(&self) -> usize {
        0
    }
    fn begin_step(&mut self, _: &[StepRecord], _: &CoreState) -> Result<()> {
        Ok(())
    }
    fn predict(&mut self, _: &ControlVector) -> Result<f64> {
        Ok(-1e4)
    }
}

#[test]
fn safety_envelope_aborts_within_one_step() {
    let sim = sim();
    let start = sim.fresh_state(&ControlVector::runin_start(), 0).unwrap();
    let mut sched = GoalSchedule::reference(1000);
    sched.safety_envelope_pcm = 400.0;
    let out = run_iteration(&sim, &start, &mut Runaway, &sched, &IterationSettings::new(50, NoisePolicy::default()), 0).unwrap();
    let r = &out.record;
    assert!(r.aborted.is_some(), "{r:?}");
    let first_bad = r.steps.iter().position(|s| s.realized_pcm.abs() > 400.0).unwrap();
    assert_eq!(first_bad, r.steps.len() - 1);
    // Realized values are the recorded simulator values.
    for (s, rec) in r.steps.iter().zip(&out.sequence.records[r.warmup_steps..]) {
        assert_eq!(s.realized_pcm, rec.reactivity * 1e5);
        assert_eq!(s.controls, *rec.controls());
    }
}

#[test]
fn perfect_oracle_holds_criticality_early_in_the_run_in() {
    let sim = sim();
    let start = sim.fresh_state(&ControlVector::runin_start(), 3).unwrap();
    let mut oracle = PerfectOracle::new(&sim);
    let sched = GoalSchedule::reference(20);
    let out = run_iteration(&sim, &start, &mut oracle, &sched, &IterationSettings::new(25, NoisePolicy::default()), 0).unwrap();
    let r = &out.record;
    assert_eq!(r.steps.len(), 25);
    assert_eq!(r.warmup_steps, 0);
    let jitter = sim.config().noise.keff_jitter_pcm;
    assert!(r.fraction_within(50.0 + 3.0 * jitter) >= 0.95, "{r:?}");
    for w in r.steps.windows(2) {
        for g in GoalControl::ALL {
            assert!(g.index(&w[1].grid) >= g.index(&w[0].grid));
        }
    }
    assert!(r.reactivity_mae.unwrap() < 3.0 * jitter);
}

/// Reactivity equals the power-per-pebble column of the last row; next
/// features persist.
struct PppModel;

impl Surrogate for PppModel {
    fn window(&self) -> usize {
        WINDOW
    }
    fn supports(&self, t: Target) -> bool {
        matches!(t, Target::Reactivity | Target::NextFeature(_))
    }
    fn predict(&self, t: Target, w: &[f64]) -> Result<f64> {
        let last = &w[(WINDOW - 1) * N_FEATURES..];
        Ok(match t {
            Target::NextFeature(j) => last[j] * 1.01,
            _ => last[5] * 1e3 + last[1] * 1e-3,
        })
    }
}

#[test]
fn surrogate_predictor_matches_a_one_step_forecast() {
    let sim = sim();
    let starts = StartStates::build(&sim, 100).unwrap();
    let plan = vec![ControlVector::benchmark(); 12];
    let (history, state) =
        pebble_core::sequence::record_plan(&sim, &starts.equilibrium, &plan, &NoisePolicy::default()).unwrap();
    let mut p = SurrogatePredictor::new(&PppModel, 250_190.0, 10).unwrap();
    p.begin_step(&history, &state).unwrap();
    let rows: Vec<[f64; N_FEATURES]> = history.iter().map(|r| r.features.to_array()).collect();
    let ledger = FuelLedger::from_row(rows.last().unwrap(), 250_190.0, 10).unwrap();
    for c in [ControlVector::benchmark(), ControlVector::benchmark().with(pebble_core::sim::ControlKind::Power, 1e5)] {
        let direct = p.predict(&c).unwrap();
        let f = forecast(&PppModel, &rows, &[c], 1, ledger.clone()).unwrap();
        assert_eq!(direct, f.reactivity().unwrap()[0]);
    }
}

#[test]
fn bias_correction_adds_the_last_model_error() {
    let sim = sim();
    let starts = StartStates::build(&sim, 100).unwrap();
    let plan = vec![ControlVector::benchmark(); 10];
    let (history, state) =
        pebble_core::sequence::record_plan(&sim, &starts.equilibrium, &plan, &NoisePolicy::default()).unwrap();
    let mut plain = SurrogatePredictor::new(&PppModel, 250_190.0, 10).unwrap();
    let mut biased = SurrogatePredictor::new(&PppModel, 250_190.0, 10).unwrap().with_bias_correction(true);
    plain.begin_step(&history, &state).unwrap();
    biased.begin_step(&history, &state).unwrap();
    assert_eq!(plain.bias(), 0.0);
    let flat: Vec<f64> = history[history.len() - WINDOW..]
        .iter()
        .flat_map(|r| r.features.to_array())
        .collect();
    let expected = history.last().unwrap().reactivity * 1e5 - PppModel.predict(Target::Reactivity, &flat).unwrap();
    assert_eq!(biased.bias(), expected);
    let c = ControlVector::benchmark().with(pebble_core::sim::ControlKind::Power, 2e5);
    assert_eq!(biased.predict(&c).unwrap(), plain.predict(&c).unwrap() + expected);
}

/// Needs a full window before it will choose; predicts zero.
struct NeedsWindow;

impl ReactivityPredictor for NeedsWindow {
    fn history_needed(&self) -> usize {
        WINDOW
    }
    fn begin_step(&mut self, history: &[StepRecord], _: &CoreState) -> Result<()> {
        assert!(history.len() >= WINDOW);
        Ok(())
    }
    fn predict(&mut self, _: &ControlVector) -> Result<f64> {
        Ok(0.0)
    }
}

#[test]
fn prelude_fills_the_window_and_is_validated() {
    let sim = sim();
    let start = sim.fresh_state(&ControlVector::runin_start(), 2).unwrap();
    let mut sched = GoalSchedule::reference(20);
    let noise = NoisePolicy::default();
    let prelude = oracle_prelude(&sim, &start, &sched, 5, &noise).unwrap();
    assert_eq!(prelude.len(), 5);
    // The stub ignores reactivity; keep the envelope out of the way.
    sched.safety_envelope_pcm = 1e9;
    let settings = IterationSettings::new(3, noise.clone()).with_prelude(prelude.clone());
    let out = run_iteration(&sim, &start, &mut NeedsWindow, &sched, &settings, 0).unwrap();
    assert_eq!(out.record.warmup_steps, WINDOW);
    assert_eq!(out.record.steps.len(), 3);
    assert_eq!(out.sequence.len(), WINDOW + 3);
    for (k, rec) in out.sequence.records[..WINDOW].iter().enumerate() {
        let p = prelude[k.min(prelude.len() - 1)];
        assert_eq!(*rec.controls(), sched.controls(&p));
    }

    let mut backwards = prelude.clone();
    backwards.push(GridPoint { power: 0, ..prelude[4] });
    let bad = IterationSettings::new(3, noise.clone()).with_prelude(backwards);
    assert!(run_iteration(&sim, &start, &mut NeedsWindow, &sched, &bad, 0).is_err());
    let off_grid = IterationSettings::new(3, noise).with_prelude(vec![GridPoint { rod: 5000, ..GridPoint::default() }]);
    assert!(run_iteration(&sim, &start, &mut NeedsWindow, &sched, &off_grid, 0).is_err());
}

#[test]
fn snapping_inverts_the_grid_and_clamps() {
    let sched = GoalSchedule::reference(40);
    for p in [
        GridPoint::default(),
        GridPoint { power: 17, graphite: 400, rod: 999, timestep: -2 },
        sched.final_point(),
    ] {
        assert_eq!(sched.snap(&sched.controls(&p)), p);
    }
    let beyond = ControlVector {
        power: 1e9,
        rod_depth: -50.0,
        timestep: 1e3,
        ..ControlVector::runin_start()
    };
    let s = sched.snap(&beyond);
    assert_eq!(s.power, sched.power.points);
    assert_eq!(s.rod, 0);
    assert_eq!(s.timestep, sched.timestep.max_index);
}

#[test]
fn trim_moves_can_be_rate_limited() {
    let mut sched = GoalSchedule::reference(40);
    let at = GridPoint { timestep: 1, ..GridPoint::default() };
    assert_eq!(sched.trim_bounds(&at), (sched.timestep.min_index, sched.timestep.max_index));
    sched.max_trim_move = Some(1);
    let (lo, hi) = sched.trim_bounds(&at);
    assert_eq!((lo, hi), (0.max(sched.timestep.min_index), 2.min(sched.timestep.max_index)));
}
