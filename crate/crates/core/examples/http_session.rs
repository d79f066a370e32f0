//! Drive an interactive session through the HTTP router in-process, as an
//! annotation front end would: create, fetch the batch, submit labels
//! (retrying once with the same idempotency key), wait for retraining and
//! read the new metrics point.
//!
//! cargo run --release --example http_session
//!
//! `alner serve --config <file>` exposes the same routes on a socket.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use alner::interface::server::{router, AppState};
use alner::synthetic::SyntheticSpec;
use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (u16, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .expect("request");
    let resp = app.clone().oneshot(req).await.expect("infallible");
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> alner::Result<()> {
    let dataset = SyntheticSpec {
        n_sentences: 400,
        ..Default::default()
    }
    .generate(4)?
    .into_dataset(4, 0.25)?;
    let app = router(AppState::new(BTreeMap::from([("demo".to_string(), Arc::new(dataset))]), None)?);

    let (code, v) = call(&app, "POST", "/sessions", Some(json!({"dataset": "demo", "config": {"m": 2}}))).await;
    let id = v["session_id"].as_str().expect("id").to_string();
    println!("POST /sessions -> {code} {id}");

    let (_, q) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    println!("batch of {} sentences, tags {}", q["batch"].as_array().map_or(0, Vec::len), q["tags"]);

    // The oracle here is "everything is O"; a real annotator supplies tags.
    let annotations: Vec<Value> = q["batch"]
        .as_array()
        .expect("batch")
        .iter()
        .map(|s| json!({"sentence": s["id"], "tags": vec!["O"; s["tokens"].as_array().map_or(0, Vec::len)]}))
        .collect();
    let body = json!({"annotations": annotations, "idempotency_key": "batch-0"});
    let (code, r) = call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(body.clone())).await;
    println!("submit -> {code}, status {}", r["status"]);
    let (code, r) = call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(body)).await;
    println!("retry  -> {code}, duplicate {}, ledger {}", r["outcomes"][0]["duplicate"], r["ledger"]);

    let (code, r) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/annotations"),
        Some(json!({"annotations": [{"sentence": 0, "tags": ["B-XYZ"]}]})),
    )
    .await;
    println!("bad tag -> {code} {r}");

    loop {
        let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        if v["status"] != "training" {
            println!("status {}, next batch {} sentences", v["status"], v["batch"].as_array().map_or(0, Vec::len));
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    let (_, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    println!("metrics: {}", m["latest"]);
    let (_, d) = call(&app, "GET", &format!("/sessions/{id}/diagnostics"), None).await;
    println!("diagnostics: labeled {}, pool {}", d["labeled"], d["pool_size"]);
    Ok(())
}
