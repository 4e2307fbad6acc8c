#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chatcbm_core::synthetic::{SyntheticData, SyntheticSpec};
use chatcbm_core::{train_probe, Backend, Pipeline, PipelineConfig, Split, TrainConfig};
use chatcbm_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn data() -> SyntheticData<f64> {
    SyntheticData::generate(&SyntheticSpec::default()).unwrap()
}

pub fn app_with(backend: Arc<dyn Backend>) -> (Router, AppState, SyntheticData<f64>) {
    let data = data();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let probe = train_probe(&data.split(Split::Train), &data.roster, &cfg).unwrap();
    let pipeline = Pipeline::new(
        data.bank.clone(),
        data.roster.clone(),
        probe,
        Some(data.true_priors()),
        data.split(Split::Val),
        PipelineConfig {
            n_candidates: 4,
            k_shots: 1,
            ..PipelineConfig::default()
        },
    )
    .unwrap();
    let state = AppState::new(pipeline, data.split(Split::Test), backend);
    (router(state.clone()), state, data)
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn create(app: &Router, example: &str) -> String {
    let (status, v) = call(app, Method::POST, "/sessions", Some(serde_json::json!({"example_id": example}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}
