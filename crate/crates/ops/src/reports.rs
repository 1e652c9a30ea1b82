//! CSV reports.

use std::fmt::Display;
use std::path::Path;

use pebble_core::analysis::{ForecastTrace, ImportanceReport, ReconstructionRow};
use pebble_core::features::FEATURE_NAMES;
use pebble_core::lstm::{EvalReport, LstmModel};
use pebble_core::runin::RunInRecord;
use pebble_core::sequence::Target;

use crate::artifact;
use crate::error::Result;

pub const REPORT_KIND: &str = "report";

/// Plain CSV table builder; cells are written with `Display`.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: ToString>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(ToString::to_string).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        artifact::write(path, REPORT_KIND, 1, self.to_csv().as_bytes())
    }
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Free text with commas and quotes removed so the CSV stays flat.
fn text(s: &str) -> String {
    s.replace([',', '"', '\n'], " ")
}

pub fn learning_curve(model: &LstmModel) -> Table {
    let mut t = Table::new(&["epoch", "train_loss", "val_loss"]);
    let h = &model.history;
    for (i, (tr, va)) in h.train_loss.iter().zip(&h.val_loss).enumerate() {
        t.row(vec![(i + 1).to_string(), tr.to_string(), va.to_string()]);
    }
    t
}

pub fn evaluation(rows: &[(Target, EvalReport)]) -> Table {
    let mut t = Table::new(&["target", "r_squared", "mae", "n"]);
    for (target, r) in rows {
        t.row(vec![target.name(), opt(r.r_squared), r.mae.to_string(), r.n.to_string()]);
    }
    t
}

/// One row per feature, one column per target, values are MAE increases.
pub fn importance(report: &ImportanceReport) -> Table {
    let mut header = vec!["feature".to_string()];
    header.extend(report.targets.iter().map(Target::name));
    let mut t = Table::new(&header);
    for (j, name) in report.feature_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(report.delta_mae[j].iter().map(|v| v.to_string()));
        t.row(row);
    }
    t
}

pub fn reconstruction(rows: &[ReconstructionRow]) -> Table {
    let mut t = Table::new(&[
        "mask",
        "mean_abs_pct_error",
        "max_abs_pct_error",
        "mean_abs_pct_of_mesh",
        "n_samples",
        "n_cells",
    ]);
    for r in rows {
        t.row(vec![
            text(&r.mask.label()),
            r.mean_abs_pct_error.to_string(),
            r.max_abs_pct_error.to_string(),
            r.mean_abs_pct_of_mesh.to_string(),
            r.n_samples.to_string(),
            r.n_cells.to_string(),
        ]);
    }
    t
}

/// Forecast steps with controls, every predicted target and, when known,
/// the realized reactivity.
pub fn forecast(trace: &ForecastTrace) -> Table {
    let mut header = vec!["step".to_string()];
    header.extend(FEATURE_NAMES[..5].iter().map(|s| s.to_string()));
    header.extend(trace.targets.iter().map(Target::name));
    header.push("realized_reactivity".into());
    let mut t = Table::new(&header);
    for k in 0..trace.horizon {
        let mut row = vec![(k + 1).to_string()];
        row.extend(trace.plan[k].as_array().iter().map(|v| v.to_string()));
        row.extend(trace.predictions[k].iter().map(|v| v.to_string()));
        row.push(opt(trace.truth_reactivity.as_ref().map(|r| r[k])));
        t.row(row);
    }
    t
}

pub fn runin_steps(record: &RunInRecord) -> Table {
    let mut t = Table::new(&[
        "iteration",
        "step",
        "step_index",
        "elapsed_days",
        "power_index",
        "graphite_index",
        "rod_index",
        "timestep_index",
        "graphite_fraction",
        "power",
        "rod_depth",
        "timestep",
        "discard_threshold",
        "predicted_pcm",
        "realized_pcm",
        "queries",
        "tolerance_violation",
    ]);
    for (i, s) in record.steps.iter().enumerate() {
        let mut row = vec![
            record.iteration.to_string(),
            (i + 1).to_string(),
            s.step_index.to_string(),
            s.elapsed_days.to_string(),
            s.grid.power.to_string(),
            s.grid.graphite.to_string(),
            s.grid.rod.to_string(),
            s.grid.timestep.to_string(),
        ];
        row.extend(s.controls.as_array().iter().map(|v| v.to_string()));
        row.extend([
            s.predicted_pcm.to_string(),
            s.realized_pcm.to_string(),
            s.queries.to_string(),
            s.tolerance_violation.to_string(),
        ]);
        t.row(row);
    }
    t
}

/// One row per loop iteration: the series behind the days-to-full-power
/// and reactivity-error plots.
pub fn loop_metrics(records: &[RunInRecord]) -> Table {
    let mut t = Table::new(&[
        "iteration",
        "min_perturbations",
        "prelude_steps",
        "steps",
        "goals_reached",
        "days_to_full_power",
        "reactivity_mae_pcm",
        "aborted",
        "retrain_failed",
    ]);
    for r in records {
        t.row(vec![
            r.iteration.to_string(),
            r.min_perturbations.to_string(),
            r.warmup_steps.to_string(),
            r.steps.len().to_string(),
            r.goals_reached.to_string(),
            opt(r.days_to_full_power),
            opt(r.reactivity_mae),
            text(r.aborted.as_deref().unwrap_or("")),
            text(r.retrain_failed.as_deref().unwrap_or("")),
        ]);
    }
    t
}
