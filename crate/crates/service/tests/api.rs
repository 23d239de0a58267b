use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use patchscope_core::eval::{generate_synthetic, SynthConfig};
use patchscope_core::store::ingest;
use patchscope_core::{EmbeddingVector, ImageRecord, PatchBox, PatchRecord, PyramidSpec, VectorDatabase};
use patchscope_service::{
    router, AppState, CreateSessionRequest, CreateSessionResponse, FeedbackResponse, NextResponse, ServiceConfig,
};
use serde_json::{json, Value};
use tower::ServiceExt;

/// One 224×224 single-patch image per angle, embedded at that angle in 2-D.
fn angle_db(angles: &[f64]) -> VectorDatabase {
    let recs = angles.iter().enumerate().map(|(i, a)| {
        let id = i as u64;
        let e = EmbeddingVector::new(vec![a.cos() as f32, a.sin() as f32]).normalize().unwrap();
        let rect = PatchBox::new(0.0, 0.0, 224.0, 224.0).unwrap();
        (
            ImageRecord::new(id, 224, 224, format!("img/{id}.jpg")).unwrap(),
            vec![PatchRecord { vector_id: id, image_id: id, level: 0, rect, embedding: e }],
        )
    });
    ingest(recs, &PyramidSpec::default()).unwrap()
}

/// Ten near-axis images, then ten at +0.5 rad and ten just inside -0.5 rad.
fn split_db() -> VectorDatabase {
    let mut angles: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
    angles.extend((0..10).map(|i| 0.5 + 1e-5 * i as f64));
    angles.extend((0..10).map(|i| -(0.5 - 1e-4) + 1e-5 * i as f64));
    angle_db(&angles)
}

fn app_with(db: VectorDatabase, config: ServiceConfig) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(db, config).unwrap());
    (router(state.clone()), state)
}

fn app(db: VectorDatabase) -> Router {
    app_with(db, ServiceConfig::default()).0
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn create(app: &Router, body: Value) -> String {
    let (s, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    serde_json::from_value::<CreateSessionResponse>(v).unwrap().session_id
}

async fn next(app: &Router, id: &str) -> NextResponse {
    let (s, v) = call(app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn ids(r: &NextResponse) -> Vec<u64> {
    r.images.iter().map(|i| i.image_id).collect()
}

#[tokio::test]
async fn create_validates_query() {
    let app = app(split_db());
    let id = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let other = create(&app, json!({"query_vector": [1.0, 0.0], "k": 5, "mode": "pyramid-max"})).await;
    assert_ne!(id, other);

    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"query_vector": [1.0, 0.0, 0.0]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"query_vector": [0.0, 0.0]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"query_vector": [1.0, 0.0], "mode": "nope"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"query_vector": [1.0, 0.0], "k": 0}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"query_text": "hot-air balloon"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert!(v["error"].as_str().unwrap().contains("bridge"));
}

#[tokio::test]
async fn next_batches_rounds_and_exhaustion() {
    let app = app(split_db());
    let (s, _) = call(&app, "GET", "/sessions/missing/next", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let id = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let first = next(&app, &id).await;
    assert_eq!(first.round, 1);
    let mut top = ids(&first);
    top.sort();
    assert_eq!(top, (0..10).collect::<Vec<_>>());
    assert!(first.images.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(first.images[0].uri, format!("img/{}.jpg", first.images[0].image_id));

    assert_eq!(next(&app, &id).await.round, 2);
    assert_eq!(next(&app, &id).await.images.len(), 10);
    let done = next(&app, &id).await;
    assert!(done.images.is_empty());
    assert_eq!(done.round, 4);
}

#[tokio::test]
async fn feedback_errors() {
    let app = app(split_db());
    let (s, _) = call(&app, "POST", "/sessions/missing/feedback", Some(json!({"events": []}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let id = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let shown = next(&app, &id).await.images[0].image_id;
    let url = format!("/sessions/{id}/feedback");
    let (s, v) = call(&app, "POST", &url, Some(json!({"events": [{"image_id": shown, "boxes": [[0, 0, 300, 50]]}]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (s, _) = call(&app, "POST", &url, Some(json!({"events": [{"image_id": 25, "boxes": []}]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", &url, Some(json!({"events": [{"image_id": 999, "boxes": []}]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    // rejected submissions must not have consumed the batch
    let (s, v) = call(&app, "POST", &url, Some(json!({"events": [{"image_id": shown}]}))).await;
    assert_eq!(s, StatusCode::OK);
    let r: FeedbackResponse = serde_json::from_value(v).unwrap();
    assert_eq!((r.examples.positives, r.examples.negatives), (0, 10));
}

#[tokio::test]
async fn boxless_feedback_counts_every_patch() {
    let cfg = SynthConfig { n_images: 30, n_concepts: 2, dim: 16, rare_fraction: 0.1, ..SynthConfig::default() };
    let data = generate_synthetic(&cfg).unwrap();
    let db = ingest(data.pyramid, &cfg.spec).unwrap();
    let per_image: std::collections::HashMap<u64, usize> =
        db.images().iter().map(|i| (i.image_id, db.image_patches(i.image_id).unwrap().len())).collect();
    let app = app(db);
    let id = create(&app, json!({"query_vector": data.queries[0].w_s.as_slice()})).await;
    let batch = next(&app, &id).await;
    let events: Vec<Value> = batch.images.iter().map(|i| json!({"image_id": i.image_id, "boxes": []})).collect();
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/feedback"), Some(json!({ "events": events }))).await;
    assert_eq!(s, StatusCode::OK);
    let r: FeedbackResponse = serde_json::from_value(v).unwrap();
    assert!(r.updated);
    assert_eq!(r.examples.positives, 0);
    assert_eq!(r.examples.negatives, batch.images.iter().map(|i| per_image[&i.image_id]).sum::<usize>());
    assert_eq!(r.totals, r.examples);
}

async fn mark_positive_side(app: &Router, id: &str, batch: &NextResponse) {
    let events: Vec<Value> = batch
        .images
        .iter()
        .map(|i| {
            if i.image_id % 2 == 0 {
                json!({"image_id": i.image_id, "boxes": [[0, 0, 224, 224]]})
            } else {
                json!({"image_id": i.image_id, "boxes": []})
            }
        })
        .collect();
    let (s, v) = call(app, "POST", &format!("/sessions/{id}/feedback"), Some(json!({ "events": events }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: FeedbackResponse = serde_json::from_value(v).unwrap();
    assert_eq!((r.examples.positives, r.examples.negatives), (5, 5));
}

#[tokio::test]
async fn feedback_changes_the_next_batch() {
    let app = app(split_db());
    let with = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let without = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let a = next(&app, &with).await;
    let b = next(&app, &without).await;
    assert_eq!(a, b);
    mark_positive_side(&app, &with, &a).await;

    let mut a2 = ids(&next(&app, &with).await);
    let mut b2 = ids(&next(&app, &without).await);
    a2.sort();
    b2.sort();
    // positives sit above the axis, so refinement pulls the +0.5 group ahead
    assert_eq!(a2, (10..20).collect::<Vec<_>>());
    assert_eq!(b2, (20..30).collect::<Vec<_>>());
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app(split_db());
    let a = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let b = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let batch = next(&app, &a).await;
    next(&app, &b).await;
    mark_positive_side(&app, &a, &batch).await;
    let fresh = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    next(&app, &fresh).await;
    assert_eq!(next(&app, &b).await.images, next(&app, &fresh).await.images);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_on_one_session_serialize() {
    let angles: Vec<f64> = (0..400).map(|i| i as f64 * 0.01).collect();
    let app = app_with(angle_db(&angles), ServiceConfig::default()).0;
    let id = create(&app, json!({"query_vector": [1.0, 0.0], "k": 5})).await;
    let tasks: Vec<_> = (0..40)
        .map(|_| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move { next(&app, &id).await })
        })
        .collect();
    let mut rounds = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for t in tasks {
        let r = t.await.unwrap();
        rounds.push(r.round);
        for i in ids(&r) {
            assert!(seen.insert(i), "image {i} shown twice");
        }
    }
    rounds.sort();
    assert_eq!(rounds, (1..=40).collect::<Vec<_>>());
    assert_eq!(seen.len(), 200);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let config = ServiceConfig { idle_timeout: Duration::from_millis(20), ..ServiceConfig::default() };
    let (app, state) = app_with(split_db(), config);
    let a = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    let _b = create(&app, json!({"query_vector": [1.0, 0.0]})).await;
    assert!(state.sessions.created_at(&a).await.is_some());
    assert_eq!(state.sessions.len().await, 2);
    tokio::time::sleep(Duration::from_millis(50)).await;
    let (s, _) = call(&app, "GET", &format!("/sessions/{a}/next"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(state.sessions.sweep().await, 1);
    assert!(state.sessions.is_empty().await);
}

#[tokio::test]
async fn images_are_served_from_their_uri() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("0.png");
    std::fs::write(&path, b"\x89PNG fake").unwrap();
    let recs = vec![
        (ImageRecord::new(0, 224, 224, path.to_str().unwrap()).unwrap(), Vec::new()),
        (ImageRecord::new(1, 224, 224, format!("file://{}", path.display())).unwrap(), Vec::new()),
        (ImageRecord::new(2, 224, 224, "synthetic://2").unwrap(), Vec::new()),
    ];
    let db = patchscope_core::store::ingest_with_dim(Some(2), recs, &PyramidSpec::default()).unwrap();
    let app = app(db);
    for id in [0, 1] {
        let resp = app.clone().oneshot(Request::get(format!("/images/{id}")).body(Body::empty()).unwrap()).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()["content-type"], "image/png");
        assert_eq!(&to_bytes(resp.into_body(), usize::MAX).await.unwrap()[..], b"\x89PNG fake");
    }
    for id in [2, 7] {
        let (s, _) = call(&app, "GET", &format!("/images/{id}"), None).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
    }
}

/// Spawns a bridge stand-in that embeds every text as `vector`, or fails.
async fn stub_bridge(vector: Option<Vec<f32>>) -> String {
    let handler = move |Json(body): Json<Value>| {
        let vector = vector.clone();
        async move {
            let text = body["text"].as_str().unwrap_or_default().to_string();
            match vector {
                Some(v) if !text.is_empty() => (StatusCode::OK, Json(json!({ "vector": v }))),
                Some(_) => (StatusCode::BAD_REQUEST, Json(json!({"error": "empty text"}))),
                None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "model unavailable"}))),
            }
        }
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, Router::new().route("/embed_text", post(handler))).await });
    format!("http://{addr}")
}

#[tokio::test]
async fn text_queries_go_through_the_bridge() {
    let url = stub_bridge(Some(vec![0.6, 0.8])).await;
    let config = ServiceConfig { bridge_url: Some(url), ..ServiceConfig::default() };
    let (app, _) = app_with(split_db(), config);
    let by_text = create(&app, serde_json::to_value(CreateSessionRequest {
        query_text: Some("hot-air balloon".into()),
        ..Default::default()
    })
    .unwrap())
    .await;
    let by_vector = create(&app, json!({"query_vector": [0.6, 0.8]})).await;
    assert_eq!(next(&app, &by_text).await, next(&app, &by_vector).await);

    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"query_text": ""}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn bridge_failures_are_unavailable() {
    let url = stub_bridge(None).await;
    let (app, _) = app_with(split_db(), ServiceConfig { bridge_url: Some(url), ..ServiceConfig::default() });
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"query_text": "cat"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert!(v["error"].as_str().unwrap().contains("503"), "{v}");

    let config = ServiceConfig {
        bridge_url: Some("http://127.0.0.1:9".into()),
        bridge_timeout: Duration::from_secs(2),
        ..ServiceConfig::default()
    };
    let (app, _) = app_with(split_db(), config);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"query_text": "cat"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn bridge_vector_of_wrong_dimension_is_rejected() {
    let url = stub_bridge(Some(vec![1.0, 0.0, 0.0])).await;
    let (app, _) = app_with(split_db(), ServiceConfig { bridge_url: Some(url), ..ServiceConfig::default() });
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"query_text": "cat"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
