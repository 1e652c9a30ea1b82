//! HTTP API over one live [`Session`].
//!
//! Reads take a shared lock and run concurrently. Mutations take the
//! exclusive lock, which tokio hands out in request order, so commands are
//! applied one at a time in arrival order. Every response body carries
//! `step_index`, the index of the last completed step.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pebble_core::analysis::{forecast, FuelLedger};
use pebble_core::features::{FEATURE_NAMES, N_FEATURES};
use pebble_core::lstm::ModelSet;
use pebble_core::runin::{GoalSchedule, GridPoint, PerfectOracle, RunInRecord, RunInStep, SurrogatePredictor};
use pebble_core::sequence::{StepRecord, Target};
use pebble_core::sim::kernel::{ENERGY_GROUPS, MESH_AXIAL, MESH_RADIAL};
use pebble_core::sim::{ControlKind, ControlVector};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use crate::config::GoalScheduleFile;
use crate::error::OpsError;
use crate::session::{Event, Session, MAX_STEPS_PER_COMMAND};

pub struct AppState {
    pub session: Arc<RwLock<Session>>,
    models: std::sync::RwLock<Option<Arc<ModelSet>>>,
    runin: Arc<Mutex<RunInStatus>>,
    abort: Arc<AtomicBool>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(session: Session, models: Option<ModelSet>) -> Shared {
        Arc::new(Self {
            session: Arc::new(RwLock::new(session)),
            models: std::sync::RwLock::new(models.filter(|m| !m.is_empty()).map(Arc::new)),
            runin: Arc::new(Mutex::new(RunInStatus::default())),
            abort: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn models(&self) -> Option<Arc<ModelSet>> {
        self.models.read().expect("model lock").clone()
    }

    pub fn set_models(&self, models: Option<ModelSet>) {
        *self.models.write().expect("model lock") = models.filter(|m| !m.is_empty()).map(Arc::new);
    }

    pub fn runin_status(&self) -> RunInStatus {
        self.runin.lock().expect("run-in lock").clone()
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/controls", post(post_controls))
        .route("/step", post(post_step))
        .route("/forecast", post(post_forecast))
        .route("/runin/start", post(post_runin_start))
        .route("/runin/status", get(get_runin_status))
        .route("/runin/abort", post(post_runin_abort))
        .route("/history", get(get_history))
        .route("/meshes/latest", get(get_meshes))
        .route("/events", get(get_events))
        .with_state(state)
}

/// Serves `router(state)` on `addr` until the process ends.
pub async fn serve(addr: &str, state: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                fields: Vec::new(),
            },
        }
    }
}

impl From<OpsError> for ApiError {
    fn from(e: OpsError) -> Self {
        use pebble_core::Error as C;
        let status = match &e {
            OpsError::Core(C::ModelsUnavailable(_)) => StatusCode::CONFLICT,
            OpsError::Core(C::InvalidState(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            OpsError::Core(_) | OpsError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<pebble_core::Error> for ApiError {
    fn from(e: pebble_core::Error) -> Self {
        OpsError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// One recorded step; feature names match the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub step_index: u64,
    pub elapsed_days: f64,
    pub k_eff: f64,
    pub reactivity_pcm: f64,
    pub features: BTreeMap<String, f64>,
}

impl From<&StepRecord> for StepView {
    fn from(r: &StepRecord) -> Self {
        Self {
            step_index: r.step_index,
            elapsed_days: r.elapsed_days,
            k_eff: r.k_eff,
            reactivity_pcm: r.reactivity * 1e5,
            features: FEATURE_NAMES
                .iter()
                .zip(r.features.to_array())
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
        }
    }
}

fn power_grid(mesh: &[f64]) -> Vec<Vec<f64>> {
    mesh.chunks(MESH_RADIAL).take(MESH_AXIAL).map(<[f64]>::to_vec).collect()
}

fn flux_grid(mesh: &[f64]) -> Vec<Vec<Vec<f64>>> {
    mesh.chunks(MESH_RADIAL * ENERGY_GROUPS)
        .take(MESH_AXIAL)
        .map(|row| row.chunks(ENERGY_GROUPS).map(<[f64]>::to_vec).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub step_index: u64,
    pub elapsed_days: f64,
    /// Controls the next step will use.
    pub controls: ControlVector,
    pub latest: Option<StepView>,
    pub total_pebbles: u64,
    pub fuel_pebbles: f64,
    pub graphite_pebbles: f64,
    pub mean_fuel_burnup: f64,
    /// `[axial][radial]`, kW, from the latest step.
    pub power_mesh: Option<Vec<Vec<f64>>>,
    pub models: Vec<String>,
    pub runin: RunInPhase,
}

async fn get_state(State(app): State<Shared>) -> Json<StateView> {
    let s = app.session.read().await;
    let st = s.state();
    let latest = s.history().last();
    Json(StateView {
        session_id: s.id().to_string(),
        step_index: s.step_index(),
        elapsed_days: st.elapsed_days,
        controls: *s.controls(),
        latest: latest.map(StepView::from),
        total_pebbles: st.total_pebbles,
        fuel_pebbles: st.fuel_count(),
        graphite_pebbles: st.graphite_count(),
        mean_fuel_burnup: st.mean_fuel_burnup(),
        power_mesh: latest.map(|r| power_grid(&r.power_mesh)),
        models: app.models().map(|m| m.targets().iter().map(Target::name).collect()).unwrap_or_default(),
        runin: app.runin_status().phase,
    })
}

/// Any subset of the controls; missing fields keep their current value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsPatch {
    pub graphite_fraction: Option<f64>,
    pub power: Option<f64>,
    pub rod_depth: Option<f64>,
    pub timestep: Option<f64>,
    pub discard_threshold: Option<f64>,
}

impl ControlsPatch {
    pub fn apply(&self, base: &ControlVector) -> ControlVector {
        let mut c = *base;
        let values = [
            self.graphite_fraction,
            self.power,
            self.rod_depth,
            self.timestep,
            self.discard_threshold,
        ];
        for (kind, v) in ControlKind::ALL.iter().zip(values) {
            if let Some(v) = v {
                c.set(*kind, v);
            }
        }
        c
    }
}

fn check_controls(c: &ControlVector) -> Result<(), ApiError> {
    let fields: Vec<FieldError> = c
        .violations()
        .map(|(kind, value)| {
            let (min, max) = kind.legal_range();
            FieldError {
                field: kind.name().to_string(),
                value,
                min,
                max,
                message: format!("{} = {value} is outside [{min}, {max}]", kind.name()),
            }
        })
        .collect();
    if fields.is_empty() {
        return Ok(());
    }
    Err(ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: ErrorBody {
            error: "controls out of range".into(),
            fields,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlsView {
    pub step_index: u64,
    pub controls: ControlVector,
}

fn ensure_manual(app: &AppState) -> Result<(), ApiError> {
    if app.runin_status().phase == RunInPhase::Running {
        return Err(ApiError::new(StatusCode::CONFLICT, "a run-in is in progress; abort it first"));
    }
    Ok(())
}

async fn post_controls(State(app): State<Shared>, Json(patch): Json<ControlsPatch>) -> ApiResult<ControlsView> {
    ensure_manual(&app)?;
    let mut s = app.session.write().await;
    let c = patch.apply(s.controls());
    check_controls(&c)?;
    s.apply(Event::SetControls { controls: c })?;
    Ok(Json(ControlsView {
        step_index: s.step_index(),
        controls: *s.controls(),
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    #[serde(default)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsView {
    pub step_index: u64,
    pub records: Vec<StepView>,
}

async fn post_step(State(app): State<Shared>, body: Option<Json<StepRequest>>) -> ApiResult<StepsView> {
    ensure_manual(&app)?;
    let count = body.and_then(|b| b.0.count).unwrap_or(1);
    if count == 0 || count > MAX_STEPS_PER_COMMAND {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("count must lie in 1..={MAX_STEPS_PER_COMMAND}"),
        ));
    }
    let mut guard = app.session.clone().write_owned().await;
    let result = tokio::task::spawn_blocking(move || {
        let records = guard.step(count)?;
        Ok::<_, OpsError>(StepsView {
            step_index: guard.step_index(),
            records: records.iter().map(StepView::from).collect(),
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(result))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastRequest {
    pub horizon: usize,
    /// Explicit controls per future step; the last entry is held when the
    /// plan is shorter than the horizon.
    #[serde(default)]
    pub plan: Option<Vec<ControlVector>>,
    /// Applied to the current controls and held, when no plan is given.
    #[serde(default)]
    pub changes: Option<ControlsPatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    pub step: usize,
    pub controls: ControlVector,
    pub reactivity_pcm: f64,
    pub predictions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastView {
    pub step_index: u64,
    pub horizon: usize,
    pub steps: Vec<ForecastStep>,
}

/// Largest accepted forecast horizon.
pub const MAX_HORIZON: usize = 500;

async fn post_forecast(State(app): State<Shared>, Json(req): Json<ForecastRequest>) -> ApiResult<ForecastView> {
    if req.horizon == 0 || req.horizon > MAX_HORIZON {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("horizon must lie in 1..={MAX_HORIZON}"),
        ));
    }
    let models = app
        .models()
        .ok_or_else(|| ApiError::from(pebble_core::Error::ModelsUnavailable("no trained models are loaded".into())))?;
    let s = app.session.read().await;
    let mut plan = match (&req.plan, &req.changes) {
        (Some(p), _) if !p.is_empty() => p.clone(),
        (Some(_), _) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "plan is empty")),
        (None, changes) => vec![changes.unwrap_or_default().apply(s.controls())],
    };
    for c in &plan {
        check_controls(c)?;
    }
    let last = *plan.last().expect("non-empty");
    plan.resize(req.horizon, last);
    let window = pebble_core::analysis::Surrogate::window(&*models);
    let hist = s.history();
    if hist.len() < window {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("forecasting needs {window} recorded steps, the session has {}", hist.len()),
        ));
    }
    let rows: Vec<[f64; N_FEATURES]> = hist[hist.len() - window..].iter().map(|r| r.features.to_array()).collect();
    let ledger = FuelLedger::from_row(
        rows.last().expect("window is non-empty"),
        s.state().total_pebbles as f64,
        s.sim().grid().n_axial,
    )?;
    let step_index = s.step_index();
    drop(s);
    let trace = forecast(&*models, &rows, &plan, req.horizon, ledger)?;
    let names: Vec<String> = trace.targets.iter().map(Target::name).collect();
    let rho = trace.reactivity().unwrap_or_default();
    let steps = (0..trace.horizon)
        .map(|k| ForecastStep {
            step: k + 1,
            controls: trace.plan[k],
            reactivity_pcm: rho.get(k).copied().unwrap_or(f64::NAN),
            predictions: names.iter().cloned().zip(trace.predictions[k].iter().copied()).collect(),
        })
        .collect();
    Ok(Json(ForecastView {
        step_index,
        horizon: trace.horizon,
        steps,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunInPhase {
    #[default]
    Idle,
    Running,
    Finished,
    Aborted,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInStatus {
    pub phase: RunInPhase,
    pub message: Option<String>,
    pub point: Option<GridPoint>,
    pub record: Option<RunInRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    Surrogate,
    /// Reads the simulator; for demonstrations and controller checks.
    Oracle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInRequest {
    #[serde(default)]
    pub min_perturbations: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub predictor: PredictorKind,
    #[serde(default)]
    pub bias_correction: bool,
    #[serde(default)]
    pub schedule: Option<GoalScheduleFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInView {
    pub step_index: u64,
    #[serde(flatten)]
    pub status: RunInStatus,
}

async fn post_runin_start(
    State(app): State<Shared>,
    Json(req): Json<RunInRequest>,
) -> Result<(StatusCode, Json<RunInView>), ApiError> {
    let mut schedule = match &req.schedule {
        Some(f) => f.to_schedule()?,
        None => GoalSchedule::reference(40),
    };
    if let Some(n) = req.min_perturbations {
        schedule.min_perturbations = n;
    }
    schedule.validate()?;
    let max_steps = req.max_steps.unwrap_or(500);
    let models = match req.predictor {
        PredictorKind::Surrogate => Some(app.models().ok_or_else(|| {
            ApiError::from(pebble_core::Error::ModelsUnavailable("no trained models are loaded".into()))
        })?),
        PredictorKind::Oracle => None,
    };
    let session = app.session.read().await;
    let start_point = schedule.snap(session.controls());
    let step_index = session.step_index();
    let (total, n_axial) = (session.state().total_pebbles as f64, session.sim().grid().n_axial);
    let oracle = PerfectOracle::new(session.sim());
    drop(session);
    {
        let mut st = app.runin.lock().expect("run-in lock");
        if st.phase == RunInPhase::Running {
            return Err(ApiError::new(StatusCode::CONFLICT, "a run-in is already in progress"));
        }
        *st = RunInStatus {
            phase: RunInPhase::Running,
            message: None,
            point: Some(start_point),
            record: Some(RunInRecord {
                iteration: 0,
                min_perturbations: schedule.min_perturbations,
                warmup_steps: 0,
                steps: Vec::new(),
                goals_reached: schedule.goals_reached(&start_point),
                days_to_full_power: None,
                reactivity_mae: None,
                aborted: None,
                retrain_failed: None,
            }),
        };
    }
    app.abort.store(false, Ordering::SeqCst);
    let job = RunInJob {
        session: app.session.clone(),
        status: app.runin.clone(),
        abort: app.abort.clone(),
        schedule,
        max_steps,
        start_point,
    };
    tokio::task::spawn_blocking(move || match models {
        Some(m) => {
            let built = SurrogatePredictor::new(&*m, total, n_axial);
            match built {
                Ok(p) => job.run(p.with_bias_correction(req.bias_correction)),
                Err(e) => job.finish(RunInPhase::Failed, Some(e.to_string())),
            }
        }
        None => job.run(oracle),
    });
    let status = app.runin_status();
    Ok((StatusCode::ACCEPTED, Json(RunInView { step_index, status })))
}

struct RunInJob {
    session: Arc<RwLock<Session>>,
    status: Arc<Mutex<RunInStatus>>,
    abort: Arc<AtomicBool>,
    schedule: GoalSchedule,
    max_steps: usize,
    start_point: GridPoint,
}

impl RunInJob {
    fn finish(&self, phase: RunInPhase, message: Option<String>) {
        let mut guard = self.status.lock().expect("run-in lock");
        let st = &mut *guard;
        st.phase = phase;
        st.message = message;
        if let Some(r) = st.record.as_mut() {
            r.goals_reached = st.point.is_some_and(|p| self.schedule.goals_reached(&p));
            if phase == RunInPhase::Aborted {
                r.aborted.clone_from(&st.message);
            }
            if !r.steps.is_empty() {
                let n = r.steps.len() as f64;
                r.reactivity_mae =
                    Some(r.steps.iter().map(|s| (s.predicted_pcm - s.realized_pcm).abs()).sum::<f64>() / n);
            }
        }
    }

    fn run<P: pebble_core::runin::ReactivityPredictor>(self, mut predictor: P) {
        let mut point = self.start_point;
        let t0 = self.session.blocking_read().state().elapsed_days;
        let envelope = self.schedule.safety_envelope_pcm;
        for _ in 0..self.max_steps {
            if self.abort.load(Ordering::SeqCst) {
                return self.finish(RunInPhase::Aborted, Some("stopped by the operator".into()));
            }
            if self.schedule.goals_reached(&point) {
                return self.finish(RunInPhase::Finished, Some("all goals reached".into()));
            }
            let outcome = {
                let mut s = self.session.blocking_write();
                s.controlled_step(&mut predictor, &self.schedule, &point)
                    .map(|(choice, rec)| (choice, rec, s.state().elapsed_days))
            };
            let (choice, rec, days) = match outcome {
                Ok(v) => v,
                Err(e) => return self.finish(RunInPhase::Failed, Some(e.to_string())),
            };
            point = choice.point;
            let realized = rec.reactivity * 1e5;
            {
                let mut st = self.status.lock().expect("run-in lock");
                st.point = Some(point);
                let r = st.record.as_mut().expect("record set at start");
                r.steps.push(RunInStep {
                    step_index: rec.step_index,
                    elapsed_days: days - t0,
                    grid: point,
                    controls: choice.controls,
                    predicted_pcm: choice.predicted_pcm,
                    realized_pcm: realized,
                    queries: choice.queries,
                    tolerance_violation: !choice.within_tolerance,
                });
                if r.days_to_full_power.is_none() && point.power >= self.schedule.power.points {
                    r.days_to_full_power = Some(days - t0);
                }
            }
            if realized.abs() > envelope {
                return self.finish(
                    RunInPhase::Aborted,
                    Some(format!("realized reactivity {realized:.0} pcm outside +-{envelope} pcm")),
                );
            }
        }
        let done = self.schedule.goals_reached(&point);
        self.finish(
            RunInPhase::Finished,
            Some(if done { "all goals reached" } else { "step limit reached" }.into()),
        );
    }
}

async fn get_runin_status(State(app): State<Shared>) -> Json<RunInView> {
    let step_index = app.session.read().await.step_index();
    Json(RunInView {
        step_index,
        status: app.runin_status(),
    })
}

async fn post_runin_abort(State(app): State<Shared>) -> Json<RunInView> {
    app.abort.store(true, Ordering::SeqCst);
    let step_index = app.session.read().await.step_index();
    Json(RunInView {
        step_index,
        status: app.runin_status(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryQuery {
    /// Only records with `step_index > after`.
    #[serde(default)]
    pub after: Option<u64>,
}

async fn get_history(State(app): State<Shared>, Query(q): Query<HistoryQuery>) -> Json<StepsView> {
    let s = app.session.read().await;
    let after = q.after.unwrap_or(0);
    Json(StepsView {
        step_index: s.step_index(),
        records: s
            .history()
            .iter()
            .filter(|r| q.after.is_none() || r.step_index > after)
            .map(StepView::from)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshView {
    pub step_index: u64,
    /// `[axial][radial]`, kW.
    pub power: Vec<Vec<f64>>,
    /// `[axial][radial][group]` (thermal, epithermal, fast), n/cm^2/s.
    pub flux: Vec<Vec<Vec<f64>>>,
}

async fn get_meshes(State(app): State<Shared>) -> Result<Json<MeshView>, ApiError> {
    let s = app.session.read().await;
    let r = s
        .history()
        .last()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no step has been taken yet"))?;
    Ok(Json(MeshView {
        step_index: r.step_index,
        power: power_grid(&r.power_mesh),
        flux: flux_grid(&r.flux_mesh),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsView {
    pub step_index: u64,
    pub events: Vec<Event>,
}

async fn get_events(State(app): State<Shared>) -> Json<EventsView> {
    let s = app.session.read().await;
    Json(EventsView {
        step_index: s.step_index(),
        events: s.events().to_vec(),
    })
}
