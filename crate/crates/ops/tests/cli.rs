use std::fs;
use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use pebble_ops::cli::{run, Cli};
use pebble_ops::manifest::RunManifest;

const PLAN: &str = "graphite_fraction,power,rod_depth,timestep,discard_threshold
0.8879,10,60.25,6.525,19.1489
0.8879,10,60.25,6.525,19.1489
0.85,30000,60.25,6.525,19.1489
";

fn pebble(dir: &Path, args: &[&str]) -> pebble_ops::Result<()> {
    let mut full = vec!["pebble", "--data-dir", dir.to_str().unwrap()];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full).expect("arguments parse"))
}

#[test]
fn empty_plan_is_a_validation_error_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("empty.csv");
    fs::write(&plan, "graphite_fraction,power,rod_depth,timestep,discard_threshold\n").unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_pebble"))
        .args(["--data-dir", dir.path().to_str().unwrap(), "simulate", plan.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no steps"), "{stderr}");
}

#[test]
fn simulate_is_reproducible_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.csv");
    fs::write(&plan, PLAN).unwrap();
    pebble(dir.path(), &["simulate", plan.to_str().unwrap(), "--seed", "4"]).unwrap();
    let run_dir = dir.path().join("runs/simulate");
    let first = fs::read(run_dir.join("sequence.csv")).unwrap();
    let manifest = RunManifest::read(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "simulate");
    assert_eq!(manifest.seeds["seed"], 4);
    assert!(manifest.configs.contains_key("calibration"));
    assert_eq!(manifest.inputs.len(), 1);
    assert_eq!(manifest.outputs.len(), 2);
    pebble(dir.path(), &["simulate", plan.to_str().unwrap(), "--seed", "4"]).unwrap();
    assert_eq!(fs::read(run_dir.join("sequence.csv")).unwrap(), first);
    pebble(dir.path(), &["simulate", plan.to_str().unwrap(), "--seed", "5"]).unwrap();
    assert_ne!(fs::read(run_dir.join("sequence.csv")).unwrap(), first);
}

#[test]
fn illegal_plan_rows_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.csv");
    fs::write(&plan, format!("{PLAN}0.5,10,60.25,6.525,-1\n")).unwrap();
    let err = pebble(dir.path(), &["simulate", plan.to_str().unwrap()]).unwrap_err().to_string();
    assert!(err.contains("row 4"), "{err}");
}

#[test]
fn commands_explain_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let err = pebble(dir.path(), &["train"]).unwrap_err().to_string();
    assert!(err.contains("gen-data"), "{err}");
    let err = pebble(dir.path(), &["evaluate"]).unwrap_err().to_string();
    assert!(err.contains("pebble train"), "{err}");
    assert!(Cli::try_parse_from(["pebble", "evaluate", "--split", "holdout"]).is_err());
}

#[test]
fn small_pipeline_runs_from_corpus_to_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pebble(d, &["gen-data", "--handcrafted", "2", "--random", "1", "--random-length", "40", "--guided", "0"]).unwrap();
    let err = pebble(d, &["gen-data", "--handcrafted", "1", "--random", "0", "--guided", "0"]).unwrap_err();
    assert!(err.to_string().contains("--force"));
    pebble(d, &["fit-pca", "--components", "5"]).unwrap();
    assert!(d.join("pca/power.pca").exists());

    let err = pebble(d, &["train", "--target", "bogus"]).unwrap_err().to_string();
    assert!(err.contains("bogus"), "{err}");
    let cfg = d.join("training.toml");
    fs::write(&cfg, "preset = \"uniform\"\ndefault_hidden = [4]\nmax_epochs = 2\nmin_epochs = 1\ntargets = [\"reactivity\", \"dependent\", \"power_pc1\"]\n").unwrap();
    pebble(d, &["train", "--config", cfg.to_str().unwrap()]).unwrap();
    assert!(d.join("models/reactivity.ckpt").exists());
    assert!(d.join("models/power_pc1.ckpt").exists());
    assert!(d.join("runs/train/curves/reactivity.csv").exists());

    pebble(d, &["evaluate"]).unwrap();
    let eval = fs::read_to_string(d.join("runs/evaluate/evaluation.csv")).unwrap();
    assert!(eval.lines().any(|l| l.starts_with("reactivity,")));
    assert!(d.join("runs/evaluate/reconstruction.csv").exists());
    pebble(d, &["importance", "--repetitions", "1"]).unwrap();
    pebble(d, &["forecast", "--split", "5"]).unwrap();
    let summary = fs::read_to_string(d.join("runs/forecast/summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 5);
    let m = RunManifest::read(&d.join("runs/forecast/manifest.json")).unwrap();
    assert_eq!(m.outputs.len(), 5);
}
