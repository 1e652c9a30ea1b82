//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::time::Instant;

use pebble_core::analysis::{evaluate_scenario, scenario_suite, simulate_scenario, window_degradation};
use pebble_core::features::NoisePolicy;
use pebble_core::lstm::net::{batch_gradients, batch_loss, dropout_masks, init_params, Layout};
use pebble_core::lstm::{evaluate, LstmConfig, ModelSet};
use pebble_core::pca::{select_components, MeshKind, PcaModel};
use pebble_core::pipeline::{prepare, TrainingPlan};
use pebble_core::rng;
use pebble_core::runin::{optimize_loop, oracle_prelude, run_iteration, GoalSchedule, IterationSettings, PerfectOracle};
use pebble_core::sequence::{OperationSequence, Split, StartKind, StartStates, Target, WindowedDataset};
use pebble_core::sim::calibration::equilibrium_metrics;
use pebble_core::sim::depletion::{discard_fraction, regroup_discharge, MAX_BURNUP_GROUPS};
use pebble_core::sim::{ControlVector, CoreSim, PebbleCount, SimConfig};
use pebble_ops::config::default_sim_config;
use pebble_ops::corpus::{build_corpus, CorpusSpec};
use pebble_ops::reports;
use pebble_ops::session::{read_events, Session, SessionSpec};
use pebble_ops::training::{train_parallel, ParallelRetrainer};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng::stream(2024, &[]);
    let configs = 24;
    let mut worst = 0.0f64;
    let mut n_params = 0;
    for case in 0..configs {
        let input = r.random_range(1..=4);
        let layers = r.random_range(1..=2);
        let hidden: Vec<usize> = (0..layers).map(|_| r.random_range(1..=5)).collect();
        let window = r.random_range(1..=5);
        let batch = r.random_range(2..=4);
        let layout = Layout::new(input, &hidden, window);
        let mut p = init_params(&layout, case);
        for v in p.iter_mut() {
            *v += 0.3 * (r.random::<f64>() - 0.5);
        }
        let windows: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..input * window).map(|_| r.random_range(-1.5..1.5)).collect())
            .collect();
        let targets: Vec<f64> = (0..batch).map(|_| r.random_range(-1.0..1.0)).collect();
        let refs: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
        let masks: Option<Vec<Vec<Vec<f64>>>> = (case % 2 == 1).then(|| {
            let q = r.random_range(0.1..0.5);
            (0..batch).map(|i| dropout_masks(&layout, q, case * 100 + i as u64)).collect()
        });
        let l2 = if case % 3 == 0 { 0.01 } else { 0.0 };
        let g = batch_gradients(&layout, &p, &refs, &targets, masks.as_deref(), l2);
        let eps = 1e-6;
        for i in 0..layout.total {
            let mut hi = p.clone();
            hi[i] += eps;
            let mut lo = p.clone();
            lo[i] -= eps;
            let fd = (batch_loss(&layout, &hi, &refs, &targets, masks.as_deref(), l2)
                - batch_loss(&layout, &lo, &refs, &targets, masks.as_deref(), l2))
                / (2.0 * eps);
            let rel = (fd - g.grad[i]).abs() / fd.abs().max(g.grad[i].abs()).max(1e-4);
            worst = worst.max(rel);
        }
        n_params += layout.total;
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs < 60.0,
        format!("{configs} configs, {n_params} parameters, max relative error {worst:.2e} (limit 1e-4), {secs:.1} s"),
    )
}

fn pca_correctness(corpus: &[OperationSequence]) -> Outcome {
    let mut r = rng::stream(7, &[]);
    let dim = 40;
    let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let mean: Vec<f64> = (0..dim).map(|_| r.random_range(0.0..5.0)).collect();
    let samples: Vec<Vec<f64>> = (0..60)
        .map(|_| {
            let a: Vec<f64> = (0..3).map(|k| r.random_range(-1.0..1.0) * (3 - k) as f64).collect();
            (0..dim).map(|j| mean[j] + (0..3).map(|k| a[k] * basis[k][j]).sum::<f64>()).collect()
        })
        .collect();
    let model = PcaModel::fit(MeshKind::Power, &samples, 3).map_err(err)?;
    let cum = model.cumulative_ratio(3);
    let mut recon = 0.0f64;
    for s in &samples {
        let back = model.inverse_transform(&model.transform(s).map_err(err)?, None).map_err(err)?;
        recon = recon.max(back.iter().zip(s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let meshes: Vec<Vec<f64>> = corpus
        .iter()
        .filter(|s| !s.held_out)
        .flat_map(|s| s.records.iter().map(|r| r.power_mesh.clone()))
        .collect();
    let power = PcaModel::fit(MeshKind::Power, &meshes, 10).map_err(err)?;
    let k = select_components(&power, 0.982).map_err(err)?.count;
    check(
        (cum - 1.0).abs() <= 1e-10 && recon <= 1e-10 && (4..=6).contains(&k),
        format!(
            "rank-3 cumulative ratio 1{:+.1e}, round-trip error {recon:.1e}; corpus power meshes need {k} components for 98.2% (expected 5 +-1)",
            cum - 1.0
        ),
    )
}

fn discard_oracle() -> Outcome {
    let t0 = Instant::now();
    let c = 0.02288;
    let threshold = 19.1489;
    let n = 10_000_000u64;
    let mut lines = Vec::new();
    let mut ok = discard_fraction(threshold, threshold, c).map_err(err)? == 0.5;
    for (i, ratio) in [0.9, 0.95, 1.0, 1.05, 1.1].into_iter().enumerate() {
        let mu = ratio * threshold;
        let exact = discard_fraction(mu, threshold, c).map_err(err)?;
        let mut r = rng::stream(99, &[i as u64]);
        let mut hits = 0u64;
        for _ in 0..n {
            let z: f64 = r.sample(StandardNormal);
            if mu + c * mu * z >= threshold {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let sigma = (exact * (1.0 - exact) / n as f64).sqrt();
        let dev = if sigma > 0.0 { (p - exact).abs() / sigma } else { (p - exact).abs() * f64::INFINITY };
        ok &= dev <= 3.0;
        lines.push(format!("{ratio}: {dev:.2} sigma"));
    }
    check(
        ok,
        format!("exact 0.5 at mu = T; deviations {} ({:.1} s)", lines.join(", "), t0.elapsed().as_secs_f64()),
    )
}

fn weighted(groups: &[pebble_core::sim::BurnupGroup], f: impl Fn(&pebble_core::sim::BurnupGroup) -> f64) -> f64 {
    let (mut w, mut s) = (0.0, 0.0);
    for g in groups.iter().filter(|g| !g.is_graphite) {
        w += g.pebble_count.as_f64();
        s += g.pebble_count.as_f64() * f(g);
    }
    if w > 0.0 {
        s / w
    } else {
        0.0
    }
}

fn conservation(config: &SimConfig) -> Outcome {
    let sim = CoreSim::new(config.clone()).map_err(err)?;
    let mut state = sim.fresh_state(&ControlVector::runin_start(), 17).map_err(err)?;
    let mut r = rng::stream(31, &[]);
    let total = PebbleCount::whole(250_190);
    let n_radial = state.grid.n_radial;
    let top = (state.grid.n_axial - 1) * n_radial;
    let mut controls = ControlVector::runin_start();
    let (mut max_bins, mut max_rel) = (0usize, 0.0f64);
    for step in 0..1000 {
        if step % 5 == 0 {
            controls = ControlVector {
                graphite_fraction: r.random_range(0.0..0.9),
                power: r.random_range(1_000.0..330_000.0),
                rod_depth: r.random_range(60.25..369.47),
                timestep: r.random_range(0.5..13.0),
                discard_threshold: r.random_range(5.0..25.0),
            };
        }
        let pooled: Vec<_> = state.inventory[top..].iter().flatten().cloned().collect();
        let merged = regroup_discharge(&pooled, MAX_BURNUP_GROUPS).map_err(err)?;
        let count = |gs: &[pebble_core::sim::BurnupGroup], graphite: bool| {
            gs.iter()
                .filter(|g| g.is_graphite == graphite)
                .fold(PebbleCount::default(), |a, g| a + g.pebble_count)
        };
        if count(&merged, false) != count(&pooled, false) || count(&merged, true) != count(&pooled, true) {
            return Err(format!("regrouping changed pebble counts at step {step}"));
        }
        max_bins = max_bins.max(merged.iter().filter(|g| !g.is_graphite && !g.pebble_count.is_zero()).count());
        for f in [
            |g: &pebble_core::sim::BurnupGroup| g.mean_burnup,
            |g: &pebble_core::sim::BurnupGroup| g.last_pass_burnup,
            |g: &pebble_core::sim::BurnupGroup| g.nuclide_summary,
        ] {
            let (a, b) = (weighted(&pooled, f), weighted(&merged, f));
            max_rel = max_rel.max((a - b).abs() / a.abs().max(1e-300));
        }
        let res = sim.advance_step(&state, &controls).map_err(err)?;
        if res.state_after.total_count() != total {
            return Err(format!(
                "step {step}: {} pebbles instead of 250190",
                res.state_after.total_count().as_f64()
            ));
        }
        state = res.state_after;
    }
    check(
        max_bins <= 12 && max_rel <= 1e-12,
        format!("1000 steps at exactly 250190 pebbles; at most {max_bins} fuel bins per discharge; weighted means kept to {max_rel:.1e}"),
    )
}

fn calibration(config: &SimConfig) -> Outcome {
    let t0 = Instant::now();
    let bench = ControlVector::benchmark();
    let m = equilibrium_metrics(config, &bench, 480, 40).map_err(err)?;
    let worst = m.keff_window.iter().map(|k| (k - 1.0).abs()).fold(0.0, f64::max);
    let rel = m.mean_discharge_burnup / bench.discard_threshold - 1.0;
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst <= 0.010 && rel.abs() <= 0.10 && secs < 300.0,
        format!(
            "final 40 steps |k-1| <= {worst:.4}; mean discharge burnup {:.2} %FIMA ({:+.1}% of threshold); {secs:.1} s",
            m.mean_discharge_burnup,
            100.0 * rel
        ),
    )
}

struct Learned {
    plan: TrainingPlan,
    dataset: WindowedDataset,
    models: ModelSet,
    seconds: f64,
}

fn acceptance_plan() -> TrainingPlan {
    let base = LstmConfig {
        max_epochs: 60,
        ..LstmConfig::default()
    };
    let mut targets = vec![Target::Reactivity, Target::PowerPc(0)];
    targets.extend(Target::dependent());
    let mut plan = TrainingPlan::new(base, targets);
    plan.default_hidden = Some(vec![16]);
    plan
}

fn learn(corpus: &[OperationSequence]) -> Result<Learned, String> {
    let t0 = Instant::now();
    let plan = acceptance_plan();
    let (dataset, _, _) = prepare(&plan, corpus).map_err(err)?;
    let models = train_parallel(&plan, &dataset).map_err(err)?;
    Ok(Learned {
        plan,
        dataset,
        models,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn learning(corpus: &[OperationSequence], learned: &Result<Learned, String>) -> Outcome {
    let l = learned.as_ref().map_err(Clone::clone)?;
    let r2 = |t: Target| -> Result<f64, String> {
        let m = l.models.get(t).ok_or("missing model")?;
        Ok(evaluate(m, &l.dataset, Split::Test).map_err(err)?.r_squared.unwrap_or(f64::NAN))
    };
    let (rho, pc1) = (r2(Target::Reactivity)?, r2(Target::PowerPc(0))?);
    let sequences = corpus.iter().filter(|s| !s.held_out).count();
    check(
        sequences >= 10 && rho >= 0.95 && pc1 >= 0.90 && l.seconds <= 1800.0,
        format!(
            "{sequences} sequences, {} windows; test R^2 reactivity {rho:.4} (>= 0.95), power PC1 {pc1:.4} (>= 0.90); {} targets trained in {:.0} s",
            l.dataset.n_samples(),
            l.models.len(),
            l.seconds
        ),
    )
}

fn forecast_degradation(sim: &CoreSim, starts: &StartStates, learned: &Result<Learned, String>) -> Outcome {
    let l = learned.as_ref().map_err(Clone::clone)?;
    let noise = NoisePolicy::default();
    let mut outcomes = Vec::new();
    let mut parts = Vec::new();
    for (k, sc) in scenario_suite().iter().enumerate() {
        let truth = simulate_scenario(sim, starts, sc, 500 + k as u64, &noise).map_err(err)?;
        let o = evaluate_scenario(&l.models, &truth).map_err(err)?;
        let (e, late) = (&o.abs_error[..10], &o.abs_error[10..20]);
        parts.push(format!(
            "{} {:.0}/{:.0}",
            o.name,
            e.iter().sum::<f64>() / 10.0,
            late.iter().sum::<f64>() / 10.0
        ));
        outcomes.push(o);
    }
    let (early, late) = window_degradation(&outcomes, 10).map_err(err)?;
    check(
        late >= early,
        format!("mean |error| steps 1-10 {early:.1} pcm, steps 11-20 {late:.1} pcm ({})", parts.join(", ")),
    )
}

fn oracle_runin(sim: &CoreSim, starts: &StartStates, s: usize) -> Result<(bool, f64, f64, usize), String> {
    let limit = 50.0 + 3.0 * sim.config().noise.keff_jitter_pcm;
    let schedule = GoalSchedule::reference(s);
    let settings = IterationSettings::new(1000, NoisePolicy { rng_seed: 40 + s as u64, ..NoisePolicy::default() });
    let mut oracle = PerfectOracle::new(sim);
    let out = run_iteration(sim, &starts.get(StartKind::Runin, 40 + s as u64), &mut oracle, &schedule, &settings, 0)
        .map_err(err)?;
    let r = out.record;
    Ok((r.goals_reached && r.aborted.is_none(), r.fraction_within(limit), limit, r.steps.len()))
}

fn controller(sim: &CoreSim, starts: &StartStates) -> Outcome {
    let (goals, frac, limit, steps) = oracle_runin(sim, starts, 20)?;
    let (goals40, frac40, _, steps40) = oracle_runin(sim, starts, 40)?;
    check(
        goals && frac >= 0.95,
        format!(
            "s=20: {steps} steps, {:.1}% within {limit:.0} pcm, goals reached {goals}; s=40 (for reference): {steps40} steps, {:.1}%, goals reached {goals40}",
            100.0 * frac,
            100.0 * frac40
        ),
    )
}

fn end_to_end(sim: &CoreSim, starts: &StartStates, corpus: &[OperationSequence], learned: &Result<Learned, String>) -> Outcome {
    let l = learned.as_ref().map_err(Clone::clone)?;
    let t0 = Instant::now();
    let schedule = GoalSchedule::reference(40);
    let start = starts.get(StartKind::Runin, 9);
    let noise = NoisePolicy { rng_seed: 9, ..NoisePolicy::default() };
    let prelude = oracle_prelude(sim, &start, &schedule, 8, &noise).map_err(err)?;
    let mut settings = IterationSettings::new(400, noise).with_prelude(prelude);
    settings.bias_correction = true;
    let mut dataset = corpus.to_vec();
    let n0 = dataset.len();
    let mut retrainer = ParallelRetrainer::new(l.plan.clone());
    let report = optimize_loop(
        sim,
        &start,
        l.models.clone(),
        &mut dataset,
        &schedule,
        &settings,
        3,
        &[40],
        &mut retrainer,
    )
    .map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("loop_metrics.csv");
    let table = reports::loop_metrics(&report.records);
    table.write(&path).map_err(err)?;
    let text = std::fs::read_to_string(&path).map_err(err)?;
    let has_columns = text.contains("days_to_full_power") && text.contains("reactivity_mae_pcm");
    let summary: Vec<String> = report
        .records
        .iter()
        .map(|r| {
            format!(
                "it{} {} steps, goals {}, days {}, MAE {}{}",
                r.iteration,
                r.steps.len(),
                r.goals_reached,
                r.days_to_full_power.map_or("-".into(), |d| format!("{d:.0}")),
                r.reactivity_mae.map_or("-".into(), |m| format!("{m:.0}")),
                r.aborted.as_ref().map_or(String::new(), |a| format!(", aborted: {a}"))
            )
        })
        .collect();
    check(
        report.records.len() == 3 && dataset.len() == n0 + 3 && table.len() == 3 && has_columns,
        format!(
            "dataset {n0} -> {} sequences, metrics CSV with 3 rows; {} ({:.0} s)",
            dataset.len(),
            summary.join("; "),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn replay(config: &SimConfig) -> Outcome {
    let mut r = rng::stream(5, &[]);
    let mut session = Session::create(config.clone(), &SessionSpec::new(StartKind::Runin, 77)).map_err(err)?;
    for _ in 0..40 {
        if r.random_bool(0.4) {
            let c = ControlVector {
                graphite_fraction: r.random_range(0.0..0.9),
                power: r.random_range(10.0..300_000.0),
                rod_depth: r.random_range(0.0..369.47),
                timestep: r.random_range(0.5..13.0),
                discard_threshold: r.random_range(5.0..25.0),
            };
            session.set_controls(c).map_err(err)?;
        } else {
            session.step(r.random_range(1..6)).map_err(err)?;
        }
    }
    let dir = tempfile::tempdir().map_err(err)?;
    let log = dir.path().join("events.jsonl");
    session.write_log(&log).map_err(err)?;
    let events = read_events(&log).map_err(err)?;
    let again = Session::replay(config.clone(), &events).map_err(err)?;
    let same = again.state() == session.state() && format!("{:?}", again.state()) == format!("{:?}", session.state());
    check(
        same,
        format!("{} logged events, {} steps replayed to an identical final state", events.len(), session.step_index()),
    )
}

fn main() {
    let config = default_sim_config();
    let sim = CoreSim::new(config.clone()).expect("bundled calibration is valid");
    let starts = StartStates::build(&sim, 480).expect("start states");
    let spec = CorpusSpec {
        handcrafted: 10,
        random: 4,
        guided: 2,
        seed: 100,
        ..CorpusSpec::default()
    };
    let corpus = build_corpus(&sim, &starts, &spec).expect("corpus");

    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    };
    report("gradient fidelity", gradient_fidelity());
    report("PCA correctness", pca_correctness(&corpus));
    report("discard-fraction oracle", discard_oracle());
    report("conservation and regrouping", conservation(&config));
    report("calibration", calibration(&config));
    let learned = learn(&corpus);
    report("desk-scale learning", learning(&corpus, &learned));
    report("forecast degradation trend", forecast_degradation(&sim, &starts, &learned));
    report("controller with a perfect oracle", controller(&sim, &starts));
    report("end-to-end optimize loop", end_to_end(&sim, &starts, &corpus, &learned));
    report("replay determinism", replay(&config));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
