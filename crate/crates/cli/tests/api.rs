mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use mcpm_cli::server::{router, AppState, SLICE_DIMS_HEADER};
use mcpm_cli::RunConfig;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &std::path::Path) -> (Router, Arc<AppState>) {
    let (cfg, run_dir) = fitted_run(dir);
    let cfg = RunConfig {
        run_dir: Some(run_dir),
        ..cfg
    };
    let state = Arc::new(AppState::new(cfg, 2).unwrap());
    (router(Arc::clone(&state)), state)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, _, body) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn post_json(app: &Router, uri: &str, v: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(v.to_string()))
        .unwrap();
    let (status, _, body) = call(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

#[tokio::test]
async fn tokens_paging_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let (st, v) = get_json(&app, "/api/v1/tokens?limit=2").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["total"], 27);
    let items = v["items"].as_array().unwrap();
    assert_eq!(items.len(), 2);
    assert_eq!(items[0]["surface"], "a0");
    assert_eq!(items[0]["position"].as_array().unwrap().len(), 3);

    let (_, v) = get_json(&app, "/api/v1/tokens?q=STRAY&offset=1").await;
    assert_eq!(v["total"], 3);
    assert_eq!(v["items"][0]["surface"], "stray1");

    let (st, v) = get_json(&app, "/api/v1/token/3").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["id"], 3);
    let (st, _) = get_json(&app, "/api/v1/token/999").await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unversioned_paths_are_not_served() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let (st, _, _) = call(&app, Request::get("/api/tokens").body(Body::empty()).unwrap()).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn field_meta_and_slice_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(dir.path());
    let (_, meta) = get_json(&app, "/api/v1/field/meta").await;
    assert_eq!(meta["dims"], json!([32, 32, 32]));
    assert_eq!(meta["order"], "x-fastest");
    assert_eq!(meta["meta"]["kind"], "trace");

    let (st, headers, body) = call(&app, Request::get("/api/v1/field/slice?axis=z&index=31").body(Body::empty()).unwrap()).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(headers[SLICE_DIMS_HEADER], "32,32");
    assert_eq!(body.len(), 32 * 32 * 4);
    let values: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let trace = &state.run.trace;
    assert_eq!(values[5 + 32 * 7], trace.get(5, 7, 31));

    let (st, _, _) = call(&app, Request::get("/api/v1/field/slice?axis=z&index=32").body(Body::empty()).unwrap()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _, _) = call(&app, Request::get("/api/v1/field/slice?axis=w&index=0").body(Body::empty()).unwrap()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn clusters_cover_every_token() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let (st, v) = get_json(&app, "/api/v1/clusters").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["token_labels"].as_array().unwrap().len(), 27);
    assert!(v["n_components"].as_u64().unwrap() >= 1);
}

#[tokio::test]
async fn probe_is_deterministic_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let req = json!({"token": "a0", "seed": 7});
    let (st, first) = post_json(&app, "/api/v1/probe", req.clone()).await;
    assert_eq!(st, StatusCode::OK, "{first}");
    let (_, second) = post_json(&app, "/api/v1/probe", req).await;
    assert_eq!(first["ranking"], second["ranking"]);
    assert_eq!(first["query"]["surface"], "a0");
    assert!(!first["ranking"].as_array().unwrap().is_empty());
    assert!(first["trajectories"].as_array().unwrap().len() <= 200);
    assert!(first["direction_stats"]["histogram"].is_array());
    assert!(first["euclidean"].is_array());

    let by_id = post_json(&app, "/api/v1/probe", json!({"token": 0, "seed": 7})).await.1;
    assert_eq!(by_id["ranking"], first["ranking"]);
}

#[tokio::test]
async fn probe_trajectories_are_decimated() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let (st, v) = post_json(
        &app,
        "/api/v1/probe",
        json!({"pos": [0.5, 0.5, 0.5], "seed": 1, "params": {"n_probes": 450, "n_steps": 20}}),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{v}");
    let lines = v["trajectories"].as_array().unwrap();
    assert!(lines.len() <= 200 && lines.len() >= 100);
    assert_eq!(lines[0].as_array().unwrap().len(), 21);
}

#[tokio::test]
async fn probe_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let (st, v) = post_json(&app, "/api/v1/probe", json!({"token": "zzz", "seed": 1})).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(v["suggestions"].is_array());
    let (st, _) = post_json(&app, "/api/v1/probe", json!({"seed": 1})).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = post_json(&app, "/api/v1/probe", json!({"token": "a0", "seed": 1, "params": {"sense_angle": 3.0}})).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn rankings_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let (st, v) = get_json(&app, "/api/v1/rankings?token=a3&metric=euclidean").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["metric"], "euclidean");
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 26);
    let near: Vec<&str> = entries[..2].iter().map(|e| e["surface"].as_str().unwrap()).collect();
    assert!(near.contains(&"a2") && near.contains(&"a4"), "{near:?}");

    let (_, a) = get_json(&app, "/api/v1/rankings?token=a3&metric=mcpm&seed=3").await;
    let (_, b) = get_json(&app, "/api/v1/rankings?token=a3&metric=mcpm&seed=3").await;
    assert_eq!(a, b);
    let (st, _) = get_json(&app, "/api/v1/rankings?token=a3&metric=jaccard").await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[test]
fn busy_port_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run_dir) = fitted_run(dir.path());
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port().to_string();
    let o = run(&["serve", "--run", run_dir.to_str().unwrap(), "--port", &port]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}
