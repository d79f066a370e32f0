use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use alner::al::Dataset;
use alner::interface::server::{router, AppState};
use alner::synthetic::SyntheticSpec;
use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn dataset() -> Arc<Dataset> {
    let spec = SyntheticSpec {
        n_sentences: 300,
        ..Default::default()
    };
    Arc::new(spec.generate(21).unwrap().into_dataset(21, 0.25).unwrap())
}

fn app(dir: Option<std::path::PathBuf>, ds: Arc<Dataset>) -> Router {
    router(AppState::new(BTreeMap::from([("syn".to_string(), ds)]), dir).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, header_key: Option<&str>) -> (u16, Value) {
    let mut req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    if let Some(k) = header_key {
        req = req.header("idempotency-key", k);
    }
    let req = req
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, m: u32) -> String {
    let (code, v) = call(app, "POST", "/sessions", Some(json!({"dataset": "syn", "seed": 3, "config": {"m": m, "strategy": "tTE"}})), None).await;
    assert_eq!(code, 201, "{v}");
    assert_eq!(v["status"], "awaiting_annotation");
    v["session_id"].as_str().unwrap().to_string()
}

/// Gold labels for every sentence of the current batch, as tag names.
fn gold_annotations(ds: &Dataset, batch: &Value) -> Vec<Value> {
    let scheme = ds.corpus().label_scheme();
    batch
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let id = s["id"].as_u64().unwrap() as u32;
            let tags: Vec<String> = ds
                .corpus()
                .sentence(alner::corpus::SentenceId(id))
                .gold_tags()
                .into_iter()
                .map(|t| scheme.tag_name(t).to_string())
                .collect();
            json!({"sentence": id, "tags": tags})
        })
        .collect()
}

async fn wait_ready(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (_, v) = call(app, "GET", &format!("/sessions/{id}"), None, None).await;
        if v["status"] != "training" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("session {id} never left training");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_annotation_round() {
    let ds = dataset();
    let app = app(None, ds.clone());
    let id = create(&app, 3).await;

    let (code, q) = call(&app, "GET", &format!("/sessions/{id}/query"), None, None).await;
    assert_eq!(code, 200);
    assert_eq!(q["batch"].as_array().unwrap().len(), 8);
    assert_eq!(q["iteration"], 0);
    assert_eq!(q["tags"][0], "O");
    let first_batch = q["batch"].clone();

    let annotations = gold_annotations(&ds, &first_batch);
    let body = json!({"annotations": annotations, "idempotency_key": "b0"});
    let (code, r) = call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(body.clone()), None).await;
    assert_eq!(code, 200, "{r}");
    assert_eq!(r["outcomes"].as_array().unwrap().len(), 8);
    assert_eq!(r["outcomes"][7]["batch_complete"], true);
    assert_eq!(r["status"], "training");

    let (_, q) = call(&app, "GET", &format!("/sessions/{id}/query"), None, None).await;
    if q["status"] == "training" {
        assert!(q["batch"].as_array().unwrap().is_empty());
    }

    let v = wait_ready(&app, &id).await;
    assert_eq!(v["status"], "awaiting_annotation");
    assert_eq!(v["batch_iteration"], 1);
    assert_eq!(v["batch"].as_array().unwrap().len(), 16);
    let tokens: usize = first_batch
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["tokens"].as_array().unwrap().len())
        .sum();
    assert_eq!(v["ledger"]["sentences"], 8);
    assert_eq!(v["ledger"]["tokens"], tokens);
    // Suggestions come from the freshly trained model.
    for s in v["batch"].as_array().unwrap() {
        assert_eq!(s["suggested"].as_array().unwrap().len(), s["tokens"].as_array().unwrap().len());
    }

    let (_, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None, None).await;
    assert_eq!(m["curve"].as_array().unwrap().len(), 1);
    assert_eq!(m["latest"]["sentences"], 8);
    let f1 = m["latest"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    // Retrying the whole first batch with the same key changes nothing.
    let (code, r) = call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(body), None).await;
    assert_eq!(code, 200, "{r}");
    assert!(r["outcomes"].as_array().unwrap().iter().all(|o| o["duplicate"] == true));
    assert_eq!(r["ledger"], v["ledger"]);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}"), None, None).await;
    assert_eq!(after["batch"], v["batch"]);
    assert_eq!(after["status"], "awaiting_annotation");

    let (code, d) = call(&app, "GET", &format!("/sessions/{id}/diagnostics"), None, None).await;
    assert_eq!(code, 200);
    assert_eq!(d["labeled"], 8);
    assert_eq!(d["pool_size"].as_u64().unwrap() as usize, ds.train_ids().len() - 8);
    assert!(d["density_bandwidth"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn header_key_deduplicates_single_sentences() {
    let ds = dataset();
    let app = app(None, ds.clone());
    let id = create(&app, 2).await;
    let (_, q) = call(&app, "GET", &format!("/sessions/{id}/query"), None, None).await;
    let one = vec![gold_annotations(&ds, &q["batch"])[0].clone()];
    let uri = format!("/sessions/{id}/annotations");
    let (_, r1) = call(&app, "POST", &uri, Some(json!({"annotations": one})), Some("k")).await;
    assert_eq!(r1["outcomes"][0]["duplicate"], false);
    assert_eq!(r1["outcomes"][0]["remaining"], 3);
    let (_, r2) = call(&app, "POST", &uri, Some(json!({"annotations": one})), Some("k")).await;
    assert_eq!(r2["outcomes"][0]["duplicate"], true);
    assert_eq!(r2["outcomes"][0]["remaining"], 3);
    assert_eq!(r2["status"], "awaiting_annotation");
}

#[tokio::test]
async fn errors_have_useful_statuses() {
    let ds = dataset();
    let app = app(None, ds.clone());
    let id = create(&app, 2).await;
    let (_, q) = call(&app, "GET", &format!("/sessions/{id}/query"), None, None).await;
    let s0 = &q["batch"][0];
    let n = s0["tokens"].as_array().unwrap().len();
    let uri = format!("/sessions/{id}/annotations");

    let mut tags = vec!["O"; n];
    tags[0] = "B-XYZ";
    let (code, r) = call(&app, "POST", &uri, Some(json!({"annotations": [{"sentence": s0["id"], "tags": tags}]})), None).await;
    assert_eq!(code, 422);
    assert_eq!(r["tag"], "B-XYZ");
    assert!(r["error"].as_str().unwrap().contains("B-XYZ"));

    let (code, _) = call(&app, "POST", &uri, Some(json!({"annotations": [{"sentence": s0["id"], "tags": vec!["O"; n + 2]}]})), None).await;
    assert_eq!(code, 422);

    let batch: Vec<u64> = q["batch"].as_array().unwrap().iter().map(|s| s["id"].as_u64().unwrap()).collect();
    let outside = (0..).find(|i| !batch.contains(i) && ds.train_ids().iter().any(|t| t.0 as u64 == *i)).unwrap();
    let (code, _) = call(&app, "POST", &uri, Some(json!({"annotations": [{"sentence": outside, "tags": []}]})), None).await;
    assert_eq!(code, 409);

    let (code, _) = call(&app, "GET", "/sessions/nope", None, None).await;
    assert_eq!(code, 404);
    let (code, _) = call(&app, "GET", "/sessions/nope/metrics", None, None).await;
    assert_eq!(code, 404);
    let (code, _) = call(&app, "POST", "/sessions", Some(json!({"dataset": "other"})), None).await;
    assert_eq!(code, 404);
    let (code, r) = call(&app, "POST", "/sessions", Some(json!({"config": {"m": 50}})), None).await;
    assert_eq!(code, 422);
    assert_eq!(r["key"], "m");
    let (code, _) = call(&app, "POST", "/sessions", Some(json!({"bogus": 1})), None).await;
    assert_eq!(code, 422);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_survive_a_restart() {
    let ds = dataset();
    let tmp = tempfile::tempdir().unwrap();
    let first = app(Some(tmp.path().to_path_buf()), ds.clone());
    let id = create(&first, 2).await;
    let (_, q) = call(&first, "GET", &format!("/sessions/{id}/query"), None, None).await;
    let ann = gold_annotations(&ds, &q["batch"]);
    call(&first, "POST", &format!("/sessions/{id}/annotations"), Some(json!({"annotations": ann})), None).await;
    let before = wait_ready(&first, &id).await;
    drop(first);

    let second = app(Some(tmp.path().to_path_buf()), ds);
    let (code, after) = call(&second, "GET", &format!("/sessions/{id}"), None, None).await;
    assert_eq!(code, 200);
    assert_eq!(after["ledger"], before["ledger"]);
    assert_eq!(after["batch"], before["batch"]);
    assert_eq!(after["curve"], before["curve"]);
    // New sessions do not reuse the restored id.
    let fresh = create(&second, 2).await;
    assert_ne!(fresh, id);
}
