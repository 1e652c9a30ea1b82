//! The `pebble` command line.
//!
//! Everything lives under one data directory:
//!
//! ```text
//! <data-dir>/corpus/     dataset.toml and one CSV per sequence
//! <data-dir>/pca/        power.pca, flux.pca
//! <data-dir>/models/     <target>.ckpt and training.toml
//! <data-dir>/runs/<cmd>/ reports and manifest.json of the last run
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use pebble_core::analysis::{
    evaluate_scenario, mesh_reconstruction_report, permutation_importance, simulate_scenario, window_degradation,
    MeshMask, ScoreSource, Surrogate,
};
use pebble_core::features::NoisePolicy;
use pebble_core::lstm::{evaluate, evaluate_on, ModelSet};
use pebble_core::pca::MeshKind;
use pebble_core::pipeline::{check_converged, fit_mesh_pcas, prepare};
use pebble_core::runin::{optimize_loop, oracle_prelude, IterationSettings};
use pebble_core::sequence::{record_plan, window_dataset, window_sequence, MeshPcas, Split, StartKind, StartStates};
use pebble_core::sequence::{OperationSequence, N_MESH_COMPONENTS};
use pebble_core::sim::calibration::{calibrate, CalibrationTargets};
use pebble_core::sim::{ControlVector, CoreSim, SimConfig};

use crate::api::{self, AppState};
use crate::config::{load_schedule, load_sim_config, read_toml, write_toml, TrainingFile, CALIBRATION_KIND};
use crate::corpus::{build_corpus, CorpusSpec};
use crate::error::{OpsError, Result};
use crate::formats;
use crate::manifest::RunManifest;
use crate::reports::{self, Table};
use crate::session::{Session, SessionSpec};
use crate::training::{train_parallel, ParallelRetrainer};

const TRAINING_FILE: &str = "training.toml";
const TRAINING_KIND: &str = "training";
const DEFAULT_EQUILIBRIUM_STEPS: usize = 480;

#[derive(Debug, Parser)]
#[command(name = "pebble", version, about = "Pebble-bed reactor run-in toolkit")]
pub struct Cli {
    /// Root of the corpus, PCA, model and report tree.
    #[arg(long, env = "PEBBLE_DATA_DIR", default_value = "pebble-data", global = true)]
    pub data_dir: PathBuf,
    /// Simulator calibration file; the bundled calibration when omitted.
    #[arg(long, global = true)]
    pub calibration: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StartArg {
    Runin,
    Equilibrium,
}

impl From<StartArg> for StartKind {
    fn from(s: StartArg) -> Self {
        match s {
            StartArg::Runin => StartKind::Runin,
            StartArg::Equilibrium => StartKind::Equilibrium,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a control plan (CSV) through the simulator and record it.
    Simulate {
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "runin")]
        start: StartArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Disable tally and measurement noise.
        #[arg(long)]
        no_noise: bool,
        #[arg(long, default_value = "simulated")]
        name: String,
    },
    /// Generate the training corpus.
    GenData {
        #[arg(long, default_value_t = 14)]
        handcrafted: usize,
        #[arg(long, default_value_t = 19)]
        random: usize,
        #[arg(long, default_value_t = 200)]
        random_length: usize,
        /// Oracle-guided run-in sequences.
        #[arg(long, default_value_t = 2)]
        guided: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_noise: bool,
        /// Replace an existing corpus.
        #[arg(long)]
        force: bool,
    },
    /// Fit power and flux mesh PCA on the corpus.
    FitPca {
        #[arg(long, default_value_t = N_MESH_COMPONENTS)]
        components: usize,
    },
    /// Train surrogate models.
    Train {
        /// Training configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict to these targets (repeatable).
        #[arg(long)]
        target: Vec<String>,
        /// Same hidden sizes for every target, e.g. `32,16`.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// R^2 and MAE of the trained models, plus mesh reconstruction.
    Evaluate {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Permutation feature importance.
    Importance {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Autoregressive forecasts over the scenario suite.
    Forecast {
        /// Scenario file (TOML); the built-in suite when omitted.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Steps in each of the early and late error windows.
        #[arg(long, default_value_t = 10)]
        split: usize,
    },
    /// Iterative run-in optimization with retraining.
    Runin {
        /// Goal schedule (TOML); the reference schedule when omitted.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Minimum perturbations per iteration, cycled (repeatable).
        #[arg(short = 's', long = "min-perturbations", default_values_t = [40])]
        s: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        #[arg(long, default_value_t = 400)]
        max_steps: usize,
        /// Operator-led start-up steps that fill the surrogate's window.
        #[arg(long, default_value_t = 8)]
        prelude: usize,
        /// Offset predictions by the last observed model error.
        #[arg(long)]
        bias_correction: bool,
        /// Training configuration for retraining; the stored one by default.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_noise: bool,
    },
    /// Serve the live-session HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, value_enum, default_value = "runin")]
        start: StartArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start without loading trained models.
        #[arg(long)]
        no_models: bool,
    },
    /// Refit the simulator calibration constants.
    Calibrate {
        /// Output calibration file; `<data-dir>/calibration.toml` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Dirs {
    root: PathBuf,
}

impl Dirs {
    fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    fn pca(&self) -> PathBuf {
        self.root.join("pca")
    }
    fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    fn run(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join("runs").join(name);
        fs::create_dir_all(&p).map_err(|e| OpsError::io(&p, e))?;
        Ok(p)
    }
}

fn noise_policy(off: bool, seed: u64) -> NoisePolicy {
    if off {
        NoisePolicy::noiseless(seed)
    } else {
        NoisePolicy { rng_seed: seed, ..NoisePolicy::default() }
    }
}

fn corpus(dirs: &Dirs) -> Result<Vec<OperationSequence>> {
    let dir = dirs.corpus();
    if !dir.join(formats::DATASET_FILE).exists() {
        return Err(OpsError::Invalid(format!(
            "no corpus at {}; run `pebble gen-data` first",
            dir.display()
        )));
    }
    formats::load_corpus(&dir)
}

fn models(dirs: &Dirs) -> Result<ModelSet> {
    let m = formats::load_models(&dirs.models())?;
    if m.is_empty() {
        return Err(OpsError::Invalid(format!(
            "no trained models in {}; run `pebble train` first",
            dirs.models().display()
        )));
    }
    Ok(m)
}

fn pcas(dirs: &Dirs) -> Result<Option<MeshPcas>> {
    if dirs.pca().join("power.pca").exists() {
        formats::read_pcas(&dirs.pca()).map(Some)
    } else {
        Ok(None)
    }
}

fn stored_training(dirs: &Dirs) -> Result<TrainingFile> {
    let p = dirs.models().join(TRAINING_FILE);
    if p.exists() {
        read_toml(&p, TRAINING_KIND)
    } else {
        Ok(TrainingFile::default())
    }
}

fn start_state(sim: &CoreSim, start: StartKind, seed: u64) -> Result<pebble_core::sim::CoreState> {
    let mut s = match start {
        StartKind::Runin => sim.fresh_state(&ControlVector::runin_start(), 0)?,
        StartKind::Equilibrium => sim.equilibrium_state(&ControlVector::benchmark(), DEFAULT_EQUILIBRIUM_STEPS, 0)?,
    };
    s.rng_seed = seed;
    Ok(s)
}

fn calibration_manifest(m: &mut RunManifest, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            m.config_file("calibration", p)?;
        }
        None => {
            m.config_text("calibration", crate::config::DEFAULT_CALIBRATION);
        }
    }
    Ok(())
}

fn eval_table(models: &ModelSet, ds: &pebble_core::sequence::WindowedDataset, idx: Option<Split>) -> Result<Table> {
    let mut rows = Vec::new();
    for m in &models.models {
        if ds.target_column(m.target).is_none() {
            continue;
        }
        let r = match idx {
            Some(split) => evaluate(m, ds, split)?,
            None => {
                let all: Vec<usize> = (0..ds.n_samples()).collect();
                let labelled: Vec<usize> = all
                    .into_iter()
                    .filter(|&i| ds.target_column(m.target).is_some_and(|c| c[i].is_finite()))
                    .collect();
                evaluate_on(m, ds, &labelled)?
            }
        };
        rows.push((m.target, r));
    }
    Ok(reports::evaluation(&rows))
}

/// Runs one command. Progress goes to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let dirs = Dirs { root: cli.data_dir.clone() };
    let cal = cli.calibration.as_deref();
    match cli.command {
        Command::Simulate {
            plan,
            start,
            seed,
            no_noise,
            name,
        } => {
            let controls = formats::read_plan(&plan)?;
            if controls.is_empty() {
                return Err(OpsError::Invalid(format!("{}: the plan has no steps", plan.display())));
            }
            let sim = CoreSim::new(load_sim_config(cal)?)?.with_noise(!no_noise);
            let start_kind = StartKind::from(start);
            let state = start_state(&sim, start_kind, seed)?;
            let (records, _) = record_plan(&sim, &state, &controls, &noise_policy(no_noise, seed))?;
            let seq = OperationSequence {
                name,
                provenance: pebble_core::sequence::Provenance::Handcrafted,
                seed,
                held_out: false,
                records,
            };
            let out = dirs.run("simulate")?;
            let seq_path = out.join("sequence.csv");
            let feat_path = out.join("features.csv");
            formats::write_sequence(&seq_path, &seq)?;
            formats::write_features(&feat_path, &seq.records)?;
            let mut m = RunManifest::new("simulate");
            calibration_manifest(&mut m, cal)?;
            m.seed("seed", seed).input(&plan)?.output(&seq_path)?.output(&feat_path)?;
            m.write(&out)?;
            let last = seq.records.last().expect("plan is non-empty");
            println!(
                "simulated {} steps; final k_eff {:.5} ({:.0} pcm); wrote {}",
                seq.len(),
                last.k_eff,
                last.reactivity * 1e5,
                seq_path.display()
            );
        }
        Command::GenData {
            handcrafted,
            random,
            random_length,
            guided,
            seed,
            no_noise,
            force,
        } => {
            let dir = dirs.corpus();
            if dir.join(formats::DATASET_FILE).exists() {
                if !force {
                    return Err(OpsError::Invalid(format!(
                        "{} already holds a corpus; pass --force to replace it",
                        dir.display()
                    )));
                }
                fs::remove_dir_all(&dir).map_err(|e| OpsError::io(&dir, e))?;
            }
            let sim = CoreSim::new(load_sim_config(cal)?)?.with_noise(!no_noise);
            let starts = StartStates::build(&sim, DEFAULT_EQUILIBRIUM_STEPS)?;
            let spec = CorpusSpec {
                handcrafted,
                random,
                random_length,
                guided,
                seed,
                noise: noise_policy(no_noise, seed),
                ..CorpusSpec::default()
            };
            let seqs = build_corpus(&sim, &starts, &spec)?;
            let manifest = formats::save_corpus(&dir, &seqs)?;
            let out = dirs.run("gen-data")?;
            let mut m = RunManifest::new("gen-data");
            calibration_manifest(&mut m, cal)?;
            m.seed("seed", seed);
            m.output(&dir.join(formats::DATASET_FILE))?;
            for e in &manifest.sequences {
                m.output(&dir.join(&e.file))?;
            }
            m.write(&out)?;
            let steps: usize = manifest.sequences.iter().map(|e| e.steps).sum();
            println!("wrote {} sequences ({steps} steps) to {}", manifest.sequences.len(), dir.display());
        }
        Command::FitPca { components } => {
            let seqs = corpus(&dirs)?;
            let fitted = fit_mesh_pcas(&seqs, components)?;
            formats::write_pcas(&dirs.pca(), &fitted)?;
            let out = dirs.run("fit-pca")?;
            let mut t = Table::new(&["mesh", "component", "explained_variance_ratio", "cumulative"]);
            for p in [&fitted.power, &fitted.flux] {
                for (i, r) in p.explained_variance_ratio.iter().enumerate() {
                    t.row(vec![
                        p.kind.name().to_string(),
                        (i + 1).to_string(),
                        r.to_string(),
                        p.cumulative_ratio(i + 1).to_string(),
                    ]);
                }
                println!(
                    "{}: {} components explain {:.2}%",
                    p.kind.name(),
                    p.n_components,
                    100.0 * p.cumulative_ratio(p.n_components)
                );
            }
            let report = out.join("explained_variance.csv");
            t.write(&report)?;
            let mut m = RunManifest::new("fit-pca");
            m.input(&dirs.corpus().join(formats::DATASET_FILE))?
                .output(&dirs.pca().join("power.pca"))?
                .output(&dirs.pca().join("flux.pca"))?
                .output(&report)?;
            m.write(&out)?;
        }
        Command::Train {
            config,
            target,
            hidden,
            max_epochs,
        } => {
            let mut file: TrainingFile = match &config {
                Some(p) => read_toml(p, TRAINING_KIND)?,
                None => TrainingFile::default(),
            };
            if !target.is_empty() {
                file.targets = target;
            }
            if let Some(h) = hidden {
                file.preset = crate::config::SizePreset::Uniform;
                file.default_hidden = Some(h);
            }
            if max_epochs.is_some() {
                file.max_epochs = max_epochs;
            }
            let plan = file.to_plan()?;
            let seqs = corpus(&dirs)?;
            let (ds, fitted, warnings) = prepare(&plan, &seqs)?;
            for w in &warnings {
                println!("warning: {w}");
            }
            println!(
                "training {} targets on {} windows ({} train)",
                plan.targets.len(),
                ds.n_samples(),
                ds.indices(Split::Train).len()
            );
            let set = train_parallel(&plan, &ds)?;
            check_converged(&set.models)?;
            let mdir = dirs.models();
            if mdir.exists() {
                fs::remove_dir_all(&mdir).map_err(|e| OpsError::io(&mdir, e))?;
            }
            let mut written = formats::save_models(&mdir, &set)?;
            let tpath = mdir.join(TRAINING_FILE);
            write_toml(&tpath, TRAINING_KIND, &file)?;
            written.push(tpath);
            if let Some(p) = &fitted {
                formats::write_pcas(&dirs.pca(), p)?;
                written.push(dirs.pca().join("power.pca"));
                written.push(dirs.pca().join("flux.pca"));
            }
            let out = dirs.run("train")?;
            let curves = out.join("curves");
            for m in &set.models {
                let p = curves.join(format!("{}.csv", m.target.name()));
                reports::learning_curve(m).write(&p)?;
                written.push(p);
            }
            let eval = eval_table(&set, &ds, Some(Split::Test))?;
            let ep = out.join("evaluation.csv");
            eval.write(&ep)?;
            written.push(ep);
            print!("{}", eval.to_csv());
            let mut m = RunManifest::new("train");
            m.seed("init", plan.base.seed).seed("split", plan.split_seed);
            if let Some(p) = &config {
                m.config_file("training", p)?;
            }
            m.input(&dirs.corpus().join(formats::DATASET_FILE))?.outputs(&written)?;
            m.write(&out)?;
        }
        Command::Evaluate { split } => {
            let set = models(&dirs)?;
            let seqs = corpus(&dirs)?;
            let plan = stored_training(&dirs)?.to_plan()?;
            let fitted = pcas(&dirs)?;
            let (ds, _) = window_dataset(&seqs, set.window(), fitted.as_ref(), plan.split_seed)?;
            let out = dirs.run("evaluate")?;
            let mut written = Vec::new();
            let table = eval_table(&set, &ds, Some(split.into()))?;
            let p = out.join("evaluation.csv");
            table.write(&p)?;
            written.push(p);
            print!("{}", table.to_csv());
            for seq in seqs.iter().filter(|s| s.held_out) {
                let held = window_sequence(seq, set.window(), fitted.as_ref(), &ds.scaler)?;
                let t = eval_table(&set, &held, None)?;
                let p = out.join(format!("heldout-{}.csv", seq.name));
                t.write(&p)?;
                written.push(p);
                println!("held-out `{}`:", seq.name);
                print!("{}", t.to_csv());
            }
            if let Some(p) = &fitted {
                let mut masks = Vec::new();
                for kind in [MeshKind::Power, MeshKind::Flux] {
                    masks.push(MeshMask::new(kind, &[0], ScoreSource::Truth));
                    masks.push(MeshMask::new(kind, &[0, 1, 2, 3, 4], ScoreSource::Truth));
                    let pcs: Vec<usize> = (0..N_MESH_COMPONENTS)
                        .filter(|&i| {
                            set.supports(match kind {
                                MeshKind::Power => pebble_core::sequence::Target::PowerPc(i),
                                MeshKind::Flux => pebble_core::sequence::Target::FluxPc(i),
                            })
                        })
                        .collect();
                    if pcs.len() == N_MESH_COMPONENTS {
                        masks.push(MeshMask::new(kind, &pcs, ScoreSource::Model));
                    }
                }
                let rows = mesh_reconstruction_report(Some(&set), p, &seqs, &ds, split.into(), &masks)?;
                let rp = out.join("reconstruction.csv");
                reports::reconstruction(&rows).write(&rp)?;
                written.push(rp);
            }
            let mut m = RunManifest::new("evaluate");
            m.seed("split", plan.split_seed)
                .input(&dirs.corpus().join(formats::DATASET_FILE))?
                .outputs(&written)?;
            m.write(&out)?;
        }
        Command::Importance {
            split,
            repetitions,
            seed,
        } => {
            let set = models(&dirs)?;
            let seqs = corpus(&dirs)?;
            let plan = stored_training(&dirs)?.to_plan()?;
            let fitted = pcas(&dirs)?;
            let (ds, _) = window_dataset(&seqs, set.window(), fitted.as_ref(), plan.split_seed)?;
            let report = permutation_importance(&set, &ds, split.into(), repetitions, seed)?;
            let out = dirs.run("importance")?;
            let p = out.join("importance.csv");
            reports::importance(&report).write(&p)?;
            let mut m = RunManifest::new("importance");
            m.seed("permutation", seed)
                .seed("split", plan.split_seed)
                .input(&dirs.corpus().join(formats::DATASET_FILE))?
                .output(&p)?;
            m.write(&out)?;
            println!("wrote {}", p.display());
        }
        Command::Forecast { scenarios, seed, split } => {
            let set = models(&dirs)?;
            let list = crate::config::load_scenarios(scenarios.as_deref())?;
            let sim = CoreSim::new(load_sim_config(cal)?)?;
            let starts = StartStates::build(&sim, DEFAULT_EQUILIBRIUM_STEPS)?;
            let noise = NoisePolicy { rng_seed: seed, ..NoisePolicy::default() };
            let out = dirs.run("forecast")?;
            let mut written = Vec::new();
            let mut outcomes = Vec::new();
            let mut summary = Table::new(&["scenario", "early_mae_pcm", "late_mae_pcm"]);
            for (k, sc) in list.iter().enumerate() {
                let truth = simulate_scenario(&sim, &starts, sc, pebble_core::rng::derive_seed(seed, &[k as u64]), &noise)?;
                let o = evaluate_scenario(&set, &truth)?;
                let p = out.join(format!("forecast-{}.csv", o.name));
                reports::forecast(&o.trace).write(&p)?;
                written.push(p);
                let e = &o.abs_error;
                let early = e.iter().take(split).sum::<f64>() / split.min(e.len()).max(1) as f64;
                let late_n = e.len().saturating_sub(split).min(split);
                let late = e.iter().skip(split).take(split).sum::<f64>() / late_n.max(1) as f64;
                summary.row(vec![o.name.clone(), early.to_string(), late.to_string()]);
                outcomes.push(o);
            }
            let sp = out.join("summary.csv");
            summary.write(&sp)?;
            written.push(sp);
            print!("{}", summary.to_csv());
            match window_degradation(&outcomes, split) {
                Ok((early, late)) => println!("mean |error|: steps 1-{split} {early:.1} pcm, steps {}-{} {late:.1} pcm", split + 1, 2 * split),
                Err(e) => println!("degradation not computed: {e}"),
            }
            let mut m = RunManifest::new("forecast");
            calibration_manifest(&mut m, cal)?;
            if let Some(p) = &scenarios {
                m.config_file("scenarios", p)?;
            }
            m.seed("seed", seed).outputs(&written)?;
            m.write(&out)?;
        }
        Command::Runin {
            schedule,
            s,
            iterations,
            max_steps,
            prelude,
            bias_correction,
            config,
            seed,
            no_noise,
        } => {
            let initial = models(&dirs)?;
            let mut seqs = corpus(&dirs)?;
            let n0 = seqs.len();
            let file: TrainingFile = match &config {
                Some(p) => read_toml(p, TRAINING_KIND)?,
                None => stored_training(&dirs)?,
            };
            let mut plan = file.to_plan()?;
            plan.targets.retain(|t| initial.supports(*t));
            let sched = load_schedule(schedule.as_deref(), s.first().copied())?;
            let sim = CoreSim::new(load_sim_config(cal)?)?.with_noise(!no_noise);
            let start = start_state(&sim, StartKind::Runin, seed)?;
            let noise = noise_policy(no_noise, seed);
            let mut settings = IterationSettings::new(max_steps, noise.clone());
            if prelude > 0 {
                settings = settings.with_prelude(oracle_prelude(&sim, &start, &sched, prelude, &noise)?);
            }
            settings.bias_correction = bias_correction;
            let mut retrainer = ParallelRetrainer::new(plan);
            let report = optimize_loop(
                &sim,
                &start,
                initial,
                &mut seqs,
                &sched,
                &settings,
                iterations,
                &s,
                &mut retrainer,
            )?;
            let out = dirs.run("runin")?;
            let mut written = Vec::new();
            for seq in seqs.iter_mut().skip(n0) {
                seq.name = format!("runin-seed{seed}-{}", seq.name);
                let cdir = dirs.corpus();
                let stem = seq.name.clone();
                let mut k = 1;
                while formats::read_manifest(&cdir)?.sequences.iter().any(|e| e.name == seq.name) {
                    k += 1;
                    seq.name = format!("{stem}-{k}");
                }
                formats::append_to_corpus(&cdir, seq)?;
            }
            let mdir = dirs.models();
            written.extend(formats::save_models(&mdir, &report.models)?);
            for r in &report.records {
                let p = out.join(format!("iteration-{}.csv", r.iteration));
                reports::runin_steps(r).write(&p)?;
                written.push(p);
            }
            let metrics = reports::loop_metrics(&report.records);
            let mp = out.join("loop_metrics.csv");
            metrics.write(&mp)?;
            written.push(mp);
            print!("{}", metrics.to_csv());
            let mut m = RunManifest::new("runin");
            calibration_manifest(&mut m, cal)?;
            if let Some(p) = &schedule {
                m.config_file("schedule", p)?;
            }
            m.seed("seed", seed)
                .note(format!("corpus grew from {n0} to {} sequences", seqs.len()))
                .outputs(&written)?;
            m.write(&out)?;
        }
        Command::Serve {
            addr,
            start,
            seed,
            no_models,
        } => {
            let config = load_sim_config(cal)?;
            let session = Session::create(config, &SessionSpec::new(start.into(), seed))?;
            let loaded = if no_models {
                None
            } else {
                Some(formats::load_models(&dirs.models())?)
            };
            let n = loaded.as_ref().map_or(0, ModelSet::len);
            let state = AppState::new(session, loaded);
            println!("serving on http://{addr} with {n} models");
            let rt = tokio::runtime::Runtime::new().map_err(|e| OpsError::Invalid(e.to_string()))?;
            rt.block_on(api::serve(&addr, state))
                .map_err(|e| OpsError::Invalid(format!("{addr}: {e}")))?;
        }
        Command::Calibrate { out } => {
            let config: SimConfig = load_sim_config(cal)?;
            let (fitted, report) = calibrate(&config, &CalibrationTargets::default())?;
            let path = out.unwrap_or_else(|| dirs.root.join("calibration.toml"));
            write_toml(&path, CALIBRATION_KIND, &fitted)?;
            let run = dirs.run("calibrate")?;
            let rp = run.join("report.json");
            crate::artifact::write_json(&rp, "calibration-report", 1, &report)?;
            let mut m = RunManifest::new("calibrate");
            calibration_manifest(&mut m, cal)?;
            m.output(&path)?.output(&rp)?;
            m.write(&run)?;
            println!(
                "k_fresh {:.6}, burnup_per_kwd {:.6e}, dilution exponent {:.4}; equilibrium k_eff {:.5}; discharge burnup {:.2} %FIMA; wrote {}",
                report.k_fresh,
                report.burnup_per_kwd,
                report.dilution_exponent,
                report.equilibrium.mean_keff,
                report.equilibrium.mean_discharge_burnup,
                path.display()
            );
        }
    }
    Ok(())
}
