use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use pebble_core::lstm::{LstmConfig, LstmModel, ModelSet};
use pebble_core::sequence::{StartKind, Target};
use pebble_ops::api::{router, AppState, Shared};
use pebble_ops::config::default_sim_config;
use pebble_ops::session::{Session, SessionSpec};
use serde_json::{json, Value};
use tower::ServiceExt;

fn untrained_models() -> ModelSet {
    let mut set = ModelSet::default();
    let mut targets = vec![Target::Reactivity];
    targets.extend(Target::dependent());
    for t in targets {
        set.insert(LstmModel::init(LstmConfig::default().with_hidden(&[4]), t).unwrap());
    }
    set
}

fn app(models: Option<ModelSet>) -> Shared {
    let session = Session::create(default_sim_config(), &SessionSpec::new(StartKind::Runin, 11)).unwrap();
    AppState::new(session, models)
}

async fn call(state: &Shared, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

#[tokio::test]
async fn steps_grow_the_history_and_report_the_step_index() {
    let s = app(None);
    let (st, v) = call(&s, Method::GET, "/state", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["step_index"], 0);
    assert!(v["latest"].is_null());

    let (st, v) = call(&s, Method::POST, "/step", Some(json!({"count": 3}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["step_index"], 3);
    assert_eq!(v["records"].as_array().unwrap().len(), 3);

    let (_, v) = call(&s, Method::GET, "/history", None).await;
    let recs = v["records"].as_array().unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs.iter().map(|r| r["step_index"].as_u64().unwrap()).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(recs[0]["features"].as_object().unwrap().len(), 21);

    let (_, v) = call(&s, Method::GET, "/history?after=2", None).await;
    assert_eq!(v["records"].as_array().unwrap().len(), 1);

    let (_, v) = call(&s, Method::POST, "/step", None).await;
    assert_eq!(v["step_index"], 4);
    let (st, _) = call(&s, Method::POST, "/step", Some(json!({"count": 0}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn out_of_range_controls_are_rejected_per_field() {
    let s = app(None);
    let (_, before) = call(&s, Method::GET, "/events", None).await;
    let (st, v) = call(&s, Method::POST, "/controls", Some(json!({"rod_depth": 400.0, "power": 50000.0}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let fields = v["fields"].as_array().unwrap();
    assert_eq!(fields.len(), 1);
    assert_eq!(fields[0]["field"], "rod_depth");
    assert_eq!(fields[0]["value"], 400.0);
    assert_eq!(fields[0]["max"], 369.47);
    let (_, after) = call(&s, Method::GET, "/events", None).await;
    assert_eq!(before, after, "a rejected command must not be logged");

    let (st, v) = call(&s, Method::POST, "/controls", Some(json!({"rod_depth": 200.0}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["controls"]["rod_depth"], 200.0);
    assert_eq!(v["controls"]["power"], 10.0);
    let (st, _) = call(&s, Method::POST, "/controls", Some(json!({"rods": 1.0}))).await;
    assert!(st.is_client_error());
}

#[tokio::test]
async fn forecasts_leave_the_session_untouched() {
    let s = app(Some(untrained_models()));
    let (st, v) = call(&s, Method::POST, "/forecast", Some(json!({"horizon": 5}))).await;
    assert_eq!(st, StatusCode::CONFLICT, "{v}");
    call(&s, Method::POST, "/step", Some(json!({"count": 8}))).await;
    let (_, state0) = call(&s, Method::GET, "/state", None).await;
    let (_, events0) = call(&s, Method::GET, "/events", None).await;
    let (_, hist0) = call(&s, Method::GET, "/history", None).await;

    let (st, v) = call(&s, Method::POST, "/forecast", Some(json!({"horizon": 6, "changes": {"power": 20000.0}}))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["step_index"], 8);
    let steps = v["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 6);
    assert_eq!(steps[5]["controls"]["power"], 20000.0);
    assert!(steps[0]["reactivity_pcm"].as_f64().unwrap().is_finite());
    assert_eq!(steps[0]["predictions"].as_object().unwrap().len(), 17);

    let (st, _) = call(&s, Method::POST, "/forecast", Some(json!({"horizon": 3, "changes": {"rod_depth": -1.0}}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(call(&s, Method::GET, "/state", None).await.1, state0);
    assert_eq!(call(&s, Method::GET, "/events", None).await.1, events0);
    assert_eq!(call(&s, Method::GET, "/history", None).await.1, hist0);
}

#[tokio::test]
async fn forecasts_without_models_conflict() {
    let s = app(None);
    call(&s, Method::POST, "/step", Some(json!({"count": 8}))).await;
    let (st, v) = call(&s, Method::POST, "/forecast", Some(json!({"horizon": 2}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("models"));
}

#[tokio::test]
async fn meshes_are_nested_axial_radial_group() {
    let s = app(None);
    let (st, _) = call(&s, Method::GET, "/meshes/latest", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    call(&s, Method::POST, "/step", None).await;
    let (st, v) = call(&s, Method::GET, "/meshes/latest", None).await;
    assert_eq!(st, StatusCode::OK);
    let power = v["power"].as_array().unwrap();
    assert_eq!(power.len(), 20);
    assert!(power.iter().all(|row| row.as_array().unwrap().len() == 8));
    let flux = v["flux"].as_array().unwrap();
    assert_eq!(flux.len(), 20);
    assert_eq!(flux[0].as_array().unwrap().len(), 8);
    assert_eq!(flux[0][0].as_array().unwrap().len(), 3);
    assert_eq!(v["step_index"], 1);
}

async fn wait_for_runin(s: &Shared) -> Value {
    for _ in 0..600 {
        let (_, v) = call(s, Method::GET, "/runin/status", None).await;
        if v["phase"] != "running" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("run-in did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn oracle_runin_steps_the_live_session() {
    let s = app(None);
    let (st, _) = call(&s, Method::POST, "/runin/start", Some(json!({"max_steps": 4}))).await;
    assert_eq!(st, StatusCode::CONFLICT, "surrogate run-in without models");

    let (st, v) = call(
        &s,
        Method::POST,
        "/runin/start",
        Some(json!({"max_steps": 4, "predictor": "oracle", "min_perturbations": 20})),
    )
    .await;
    assert_eq!(st, StatusCode::ACCEPTED, "{v}");
    let done = wait_for_runin(&s).await;
    assert_eq!(done["phase"], "finished", "{done}");
    let steps = done["record"]["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 4);
    assert_eq!(done["step_index"], 4);
    let (_, ev) = call(&s, Method::GET, "/events", None).await;
    let commands: Vec<&str> = ev["events"].as_array().unwrap().iter().map(|e| e["command"].as_str().unwrap()).collect();
    assert_eq!(commands.iter().filter(|c| **c == "set_controls").count(), 4);

    // A second run-in continues from the current grid position.
    let (st, _) = call(&s, Method::POST, "/runin/start", Some(json!({"max_steps": 500, "predictor": "oracle"}))).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    let (_, v) = call(&s, Method::POST, "/runin/abort", None).await;
    assert!(v["step_index"].is_u64());
    let done = wait_for_runin(&s).await;
    assert_eq!(done["phase"], "aborted", "{done}");
    assert!(done["message"].as_str().unwrap().contains("operator"));
    let (st, _) = call(&s, Method::POST, "/step", None).await;
    assert_eq!(st, StatusCode::OK, "manual control resumes after an abort");
}
