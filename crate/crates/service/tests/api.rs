use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cira_core::baseline::CueLexicon;
use cira_service::{router, AppState, Backend, FeedbackStore};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    app: Router,
    _dir: tempfile::TempDir,
    path: std::path::PathBuf,
}

fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feedback.jsonl");
    let store = FeedbackStore::open(&path).unwrap();
    let app = router(AppState::new(Backend::Baseline(CueLexicon::default()), store), None);
    Harness { app, _dir: dir, path }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn classify(app: &Router, text: &str) -> Value {
    let (status, body) = call(app, "POST", "/api/classify", Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

#[tokio::test]
async fn classify_with_baseline() {
    let h = harness();
    let body = classify(&h.app, "If A, then B").await;
    assert_eq!(body["label"], "causal");
    assert_eq!(body["confidence"], 1.0);
    assert_eq!(body["record_id"], 1);

    let body = classify(&h.app, "There is a menu item.").await;
    assert_eq!(body["label"], "non-causal");
    assert_eq!(body["confidence"], 0.5);
    assert_eq!(body["record_id"], 2);
    assert_eq!(std::fs::read_to_string(&h.path).unwrap().lines().count(), 2);
}

#[tokio::test]
async fn classify_rejects_bad_text() {
    let h = harness();
    for (text, code) in [("", "empty_text"), ("   ", "empty_text")] {
        let (status, body) = call(&h.app, "POST", "/api/classify", Some(json!({ "text": text }))).await;
        assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::BAD_REQUEST, code));
    }
    let long = "a".repeat(10_001);
    let (status, body) = call(&h.app, "POST", "/api/classify", Some(json!({ "text": long }))).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::BAD_REQUEST, "text_too_long"));
    let (status, _) = call(&h.app, "POST", "/api/classify", Some(json!({ "text": "a".repeat(10_000) }))).await;
    assert_eq!(status, StatusCode::OK);

    let (status, body) = call(&h.app, "POST", "/api/classify", Some(json!({ "txt": "x" }))).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::BAD_REQUEST, "invalid_request"));
    assert_eq!(std::fs::read_to_string(&h.path).unwrap().lines().count(), 1);
}

#[tokio::test]
async fn unknown_request_fields_are_ignored() {
    let h = harness();
    let (status, _) = call(&h.app, "POST", "/api/classify", Some(json!({ "text": "if so", "lang": "en" }))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn feedback_rules() {
    let h = harness();
    classify(&h.app, "If A, then B").await;
    classify(&h.app, "There is a menu item.").await;

    let review = |id: u64, verdict: &str, label: Option<&str>| {
        let mut body = json!({ "record_id": id, "verdict": verdict });
        if let Some(l) = label {
            body["corrected_label"] = json!(l);
        }
        body
    };
    let (status, body) = call(&h.app, "POST", "/api/feedback", Some(review(999_999, "confirmed", None))).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::NOT_FOUND, "unknown_record"));

    let (status, body) = call(&h.app, "POST", "/api/feedback", Some(review(1, "corrected", Some("causal")))).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::BAD_REQUEST, "not_a_correction"));

    let (status, body) = call(&h.app, "POST", "/api/feedback", Some(review(1, "corrected", None))).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::BAD_REQUEST, "missing_corrected_label"));

    let (status, body) = call(&h.app, "POST", "/api/feedback", Some(review(1, "maybe", None))).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::BAD_REQUEST, "invalid_verdict"));

    let lines_before = std::fs::read_to_string(&h.path).unwrap().lines().count();
    let (status, body) = call(&h.app, "POST", "/api/feedback", Some(review(1, "confirmed", None))).await;
    assert_eq!((status, body), (StatusCode::OK, json!({ "ok": true })));
    assert_eq!(std::fs::read_to_string(&h.path).unwrap().lines().count(), lines_before + 1);

    let (status, body) = call(&h.app, "POST", "/api/feedback", Some(review(1, "confirmed", None))).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::CONFLICT, "already_reviewed"));

    let (status, _) = call(&h.app, "POST", "/api/feedback", Some(review(2, "corrected", Some("causal")))).await;
    assert_eq!(status, StatusCode::OK);

    let (_, recent) = call(&h.app, "GET", "/api/recent", None).await;
    assert_eq!(recent[0]["verdict"], "corrected");
    assert_eq!(recent[0]["corrected_label"], "causal");
    assert_eq!(recent[1]["verdict"], "confirmed");
    assert!(recent[1].get("corrected_label").is_none());
}

#[tokio::test]
async fn recent_bounds_and_order() {
    let h = harness();
    let (status, body) = call(&h.app, "GET", "/api/recent", None).await;
    assert_eq!((status, body), (StatusCode::OK, json!([])));
    for i in 0..7 {
        classify(&h.app, &format!("sentence {i}")).await;
    }
    let (_, body) = call(&h.app, "GET", "/api/recent", None).await;
    let ids: Vec<u64> = body.as_array().unwrap().iter().map(|r| r["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![7, 6, 5, 4, 3]);
    let (_, body) = call(&h.app, "GET", "/api/recent?n=100", None).await;
    assert_eq!(body.as_array().unwrap().len(), 7);
    for bad in ["0", "101", "-1", "five"] {
        let (status, body) = call(&h.app, "GET", &format!("/api/recent?n={bad}"), None).await;
        assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::BAD_REQUEST, "invalid_n"), "n={bad}");
    }
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let h = harness();
    let (status, body) = call(&h.app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model"], "baseline");
    assert!(body["version"].is_string());
    let (status, body) = call(&h.app, "GET", "/api/nope", None).await;
    assert_eq!((status, body["error"].as_str().unwrap()), (StatusCode::NOT_FOUND, "not_found"));
}

#[tokio::test]
async fn serves_ui_assets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>ui</p>").unwrap();
    let store = FeedbackStore::open(dir.path().join("f.jsonl")).unwrap();
    let app = router(AppState::new(Backend::Baseline(CueLexicon::default()), store), Some(dir.path()));
    let response = app
        .clone()
        .oneshot(Request::builder().uri("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    let (status, body) = call(&app, "GET", "/api/health", None).await;
    assert_eq!((status, body["status"].as_str().unwrap()), (StatusCode::OK, "ok"));
}
