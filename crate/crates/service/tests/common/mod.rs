#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use medplan_core::generation::Pipeline;
use medplan_core::retrieval::KnowledgeBase;
use medplan_core::synth::{synthesize, SynthConfig};
use medplan_core::{PatientRecord, PipelineConfig};
use medplan_service::{App, FilePatientStore, GenerationTask, ServiceConfig, SystemClock, TaskStore};
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub records: Vec<PatientRecord>,
    pub kb: Arc<KnowledgeBase>,
}

/// Forty synthetic patients: the first thirty form the knowledge base, all
/// of them are known to the patient store.
pub fn fixture() -> Fixture {
    let records = synthesize(&SynthConfig { patients: 40, seed: 5, ..Default::default() });
    let config = PipelineConfig::default();
    let gateway = medplan_core::embedding::EmbeddingGateway::from_config(&config.providers).unwrap();
    let notes: Vec<_> = records[..30].iter().flat_map(|r| r.visits.clone()).collect();
    let kb = Arc::new(KnowledgeBase::build(&notes, &gateway).unwrap());
    Fixture { records, kb }
}

pub fn pipeline(fx: &Fixture, tweak: impl FnOnce(&mut PipelineConfig)) -> Pipeline {
    let mut config = PipelineConfig::default();
    tweak(&mut config);
    Pipeline::from_config(config, fx.kb.clone()).unwrap()
}

pub fn app(fx: &Fixture, service: ServiceConfig, pipeline: Pipeline) -> App {
    let store = Arc::new(FilePatientStore::from_records(fx.records.clone()));
    let tasks = Arc::new(TaskStore::in_memory(Arc::new(SystemClock), service.task_ttl()));
    App::new(service, pipeline, store, tasks)
}

pub async fn call(app: &App, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.router().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

pub async fn raw(app: &App, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.router().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

pub async fn submit(app: &App, path: &str, body: Value) -> String {
    let (status, v) = call(app, "POST", path, Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    v["task_id"].as_str().unwrap().to_string()
}

/// Polls until the task is terminal, checking that status never moves backwards.
pub async fn wait(app: &App, id: &str) -> GenerationTask {
    let rank = |s: &str| match s {
        "pending" => 0,
        "running" => 1,
        _ => 2,
    };
    let mut last = 0;
    for _ in 0..2000 {
        let (status, v) = call(app, "GET", &format!("/api/v1/tasks/{id}"), None).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let r = rank(v["status"].as_str().unwrap());
        assert!(r >= last, "status went backwards: {v}");
        last = r;
        if r == 2 {
            return serde_json::from_value(v).unwrap();
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("task {id} never finished");
}

pub fn is_task_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}
