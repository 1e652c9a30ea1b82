//! Human-edited configuration files: kernel calibration, goal schedules,
//! training plans and scenario suites (all TOML).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pebble_core::analysis::Scenario;
use pebble_core::lstm::LstmConfig;
use pebble_core::pipeline::TrainingPlan;
use pebble_core::runin::{ControlGrid, GoalSchedule, GridPoint, TrimGrid};
use pebble_core::sequence::{Target, N_MESH_COMPONENTS};
use pebble_core::sim::SimConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{OpsError, Result};

pub const CALIBRATION_KIND: &str = "calibration";

/// The calibration shipped with the simulator.
pub const DEFAULT_CALIBRATION: &str = include_str!("../../core/data/calibration.toml");

pub fn default_sim_config() -> SimConfig {
    toml::from_str(DEFAULT_CALIBRATION).expect("bundled calibration parses")
}

/// Reads a TOML file. A leading artifact header, if present, is verified;
/// files without one are accepted as hand-written.
pub fn read_toml<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| OpsError::io(path, e))?;
    let body = if bytes.starts_with(b"# pebble:") {
        artifact::decode(path, kind, 1, &bytes)?
    } else {
        &bytes[..]
    };
    let text = std::str::from_utf8(body).map_err(|e| OpsError::format(path, e))?;
    toml::from_str(text).map_err(|e| OpsError::format(path, e))
}

pub fn write_toml<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    let body = toml::to_string_pretty(value).map_err(|e| OpsError::format(path, e))?;
    artifact::write(path, kind, 1, body.as_bytes())
}

pub fn load_sim_config(path: Option<&Path>) -> Result<SimConfig> {
    let cfg = match path {
        Some(p) => read_toml(p, CALIBRATION_KIND)?,
        None => default_sim_config(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// One schedule row: start value, per-index perturbation and final value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub start: f64,
    pub perturbation: f64,
    #[serde(rename = "final")]
    pub end: f64,
}

impl GridRow {
    fn to_grid(self, name: &str) -> Result<ControlGrid> {
        let span = self.end - self.start;
        let points = if span == 0.0 {
            0
        } else {
            let n = span / self.perturbation;
            if !(n.is_finite() && n > 0.0) {
                return Err(OpsError::Invalid(format!(
                    "{name}: perturbation {} does not lead from {} to {}",
                    self.perturbation, self.start, self.end
                )));
            }
            n.round() as usize
        };
        Ok(ControlGrid {
            start: self.start,
            end: self.end,
            points,
        })
    }

    fn from_grid(g: &ControlGrid) -> Self {
        Self {
            start: g.start,
            perturbation: g.step(),
            end: g.end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimRow {
    pub nominal: f64,
    pub perturbation: f64,
    pub min_index: i32,
    pub max_index: i32,
}

/// Goal schedule file, one table per control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalScheduleFile {
    pub power: GridRow,
    pub graphite_fraction: GridRow,
    pub rod_depth: GridRow,
    pub timestep: TrimRow,
    pub discard_threshold: f64,
    pub tolerance_pcm: f64,
    pub min_perturbations: usize,
    pub query_budget: usize,
    pub safety_envelope_pcm: f64,
    #[serde(default)]
    pub max_trim_move: Option<usize>,
    #[serde(default)]
    pub waypoints: Vec<GridPoint>,
}

impl GoalScheduleFile {
    pub fn from_schedule(s: &GoalSchedule) -> Self {
        Self {
            power: GridRow::from_grid(&s.power),
            graphite_fraction: GridRow::from_grid(&s.graphite),
            rod_depth: GridRow::from_grid(&s.rod),
            timestep: TrimRow {
                nominal: s.timestep.center,
                perturbation: s.timestep.step,
                min_index: s.timestep.min_index,
                max_index: s.timestep.max_index,
            },
            discard_threshold: s.discard_threshold,
            tolerance_pcm: s.tolerance_pcm,
            min_perturbations: s.min_perturbations,
            query_budget: s.query_budget,
            safety_envelope_pcm: s.safety_envelope_pcm,
            max_trim_move: s.max_trim_move,
            waypoints: s.waypoints.clone(),
        }
    }

    pub fn to_schedule(&self) -> Result<GoalSchedule> {
        let s = GoalSchedule {
            power: self.power.to_grid("power")?,
            graphite: self.graphite_fraction.to_grid("graphite_fraction")?,
            rod: self.rod_depth.to_grid("rod_depth")?,
            timestep: TrimGrid {
                center: self.timestep.nominal,
                step: self.timestep.perturbation,
                min_index: self.timestep.min_index,
                max_index: self.timestep.max_index,
            },
            discard_threshold: self.discard_threshold,
            waypoints: self.waypoints.clone(),
            tolerance_pcm: self.tolerance_pcm,
            min_perturbations: self.min_perturbations,
            query_budget: self.query_budget,
            safety_envelope_pcm: self.safety_envelope_pcm,
            max_trim_move: self.max_trim_move,
        };
        s.validate()?;
        Ok(s)
    }
}

pub fn load_schedule(path: Option<&Path>, min_perturbations: Option<usize>) -> Result<GoalSchedule> {
    let mut s = match path {
        Some(p) => read_toml::<GoalScheduleFile>(p, "schedule")?.to_schedule()?,
        None => GoalSchedule::reference(40),
    };
    if let Some(n) = min_perturbations {
        s.min_perturbations = n;
    }
    s.validate()?;
    Ok(s)
}

/// Which hidden sizes a target gets when the file does not name it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizePreset {
    /// Per-target sizes of the reference architecture search.
    #[default]
    Reference,
    /// `default_hidden` for every target.
    Uniform,
}

/// Training configuration file. Omitted fields keep the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingFile {
    /// Target names; empty means all 27. `dependent` stands for the 16
    /// next-step feature targets and `mesh` for the 10 mesh components.
    pub targets: Vec<String>,
    pub preset: SizePreset,
    pub default_hidden: Option<Vec<usize>>,
    /// Per-target overrides by name, e.g. `reactivity = [256, 128]`.
    pub hidden: BTreeMap<String, Vec<usize>>,
    pub max_epochs: Option<usize>,
    pub min_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr0: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_every: Option<f64>,
    pub l2_lambda: Option<f64>,
    pub recurrent_dropout: Option<f64>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub pca_components: Option<usize>,
}

impl TrainingFile {
    pub fn to_plan(&self) -> Result<TrainingPlan> {
        let mut base = LstmConfig::default();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { base.$f = v; } )* };
        }
        set!(max_epochs, min_epochs, patience, batch_size, lr0, lr_decay_factor, lr_decay_every, l2_lambda, recurrent_dropout, seed);
        base.validate()?;
        let targets = if self.targets.is_empty() {
            Target::all()
        } else {
            let mut out: Vec<Target> = Vec::new();
            for n in &self.targets {
                let group = match n.as_str() {
                    "dependent" => Target::dependent(),
                    "mesh" => Target::all().into_iter().filter(Target::needs_pca).collect(),
                    _ => vec![Target::from_name(n)?],
                };
                out.extend(group.into_iter().filter(|t| !out.contains(t)).collect::<Vec<_>>());
            }
            out
        };
        let mut plan = TrainingPlan::new(base, targets);
        plan.hidden = self
            .hidden
            .iter()
            .map(|(n, h)| Ok((Target::from_name(n)?, h.clone())))
            .collect::<pebble_core::Result<_>>()?;
        match self.preset {
            SizePreset::Reference => plan.default_hidden = None,
            SizePreset::Uniform => {
                plan.default_hidden = Some(self.default_hidden.clone().ok_or_else(|| {
                    OpsError::Invalid("preset `uniform` needs `default_hidden`".into())
                })?)
            }
        }
        plan.split_seed = self.split_seed.unwrap_or(0);
        plan.pca_components = self.pca_components.unwrap_or(N_MESH_COMPONENTS);
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

pub fn load_scenarios(path: Option<&Path>) -> Result<Vec<Scenario>> {
    let list = match path {
        Some(p) => read_toml::<ScenarioFile>(p, "scenarios")?.scenarios,
        None => pebble_core::analysis::scenario_suite(),
    };
    for s in &list {
        s.validate()?;
    }
    Ok(list)
}
