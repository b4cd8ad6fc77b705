use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use bids_toolbox::converter::mock::SeriesFixture;
use bids_toolbox::{ConverterHandle, ErrorBody, Toolbox, VERSION};
use bids_toolbox_service::{router, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mock")
}

fn app_with(fixtures: &Path, config: ServiceConfig) -> Router {
    router(Toolbox::new(ConverterHandle::mock(fixtures)), &config).unwrap()
}

fn app() -> Router {
    app_with(&fixtures(), ServiceConfig::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn post(app: &Router, uri: &str, doc: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, doc.to_string()).await
}

/// A fixture root whose single session sleeps `delay_ms` while converting.
fn slow_fixtures(root: &Path, delay_ms: u64) -> PathBuf {
    let fx = root.join("fx");
    let sidecar = json!({"ScanningSequence": "SE", "EchoTime": 0.1, "RepetitionTime": 5.0});
    let mut series = SeriesFixture::new("t2_slow", sidecar.as_object().unwrap().clone());
    series.delay_ms = delay_ms;
    series.write_to(&fx.join("slow")).unwrap();
    let mut fast = series.clone();
    fast.delay_ms = 0;
    fast.write_to(&fx.join("fast")).unwrap();
    fx
}

#[tokio::test]
async fn health_reports_version() {
    let (status, body) = call(&app(), "GET", "/health", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "version": VERSION}));
}

#[tokio::test]
async fn reference_request_create_then_update() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dataset");
    let mut doc: Value =
        serde_json::from_str(include_str!("../../core/tests/fixtures/reference_request.json")).unwrap();
    doc["output"] = json!(out);
    let app = app();

    let (status, report) = post(&app, "/createBids", doc).await;
    assert_eq!(status, StatusCode::CREATED, "{report}");
    assert_eq!(report["status"], "created");
    assert!(report["timing"]["total_s"].is_number());
    assert!(report["timing"]["converter_s"].is_number());

    let (status, report) = post(
        &app,
        "/updateBids",
        json!({"scans": {"02": {"01": "t2-session"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["status"], "updated");
    assert!(out.join("sub-02/ses-01/anat/sub-02_ses-01_T2w.nii.gz").is_file());
}

#[tokio::test]
async fn error_statuses() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dataset");
    let app = app();

    let (status, body) = post(&app, "/createBids", json!({})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error_code"], "MissingKey");
    assert!(body.get("failed_series").is_none());

    let (status, body) = call(&app, "POST", "/createBids", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error_code"], "MalformedJson");

    let (status, body) = post(
        &app,
        "/createBids",
        json!({"scans": {"01": {"01": "rm-session"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let body: ErrorBody = serde_json::from_value(body).unwrap();
    assert_eq!(body.error_code, "ClassificationFailed");
    let failed = body.failed_series.unwrap();
    assert_eq!(failed[0].series_name, "research_seq_7");
    assert_eq!(failed[0].reason, "research mode");

    let (status, body) = post(
        &app,
        "/createBids",
        json!({"scans": {"01": {"01": "fail-session"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(body["error_code"], "ConverterFailed");

    let (status, _) = post(
        &app,
        "/createBids",
        json!({"scans": {"01": {"01": "t2-session"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, body) = post(
        &app,
        "/createBids",
        json!({"scans": {"01": {"01": "t2-session"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error_code"], "OutputNotEmpty");

    let (status, body) = post(
        &app,
        "/updateBids",
        json!({"scans": {"01": {"01": "t2-session"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error_code"], "SessionConflict");

    let (status, body) = post(
        &app,
        "/updateBids",
        json!({"scans": {"01": {"01": "t2-session"}}, "output": tmp.path()}),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error_code"], "StateFileMissing");
}

#[tokio::test]
async fn oversized_body_is_rejected() {
    let config = ServiceConfig {
        body_limit: 64,
        ..ServiceConfig::default()
    };
    let app = app_with(&fixtures(), config);
    let (status, body) = call(&app, "POST", "/createBids", vec![b' '; 1000]).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(body["error_code"], "PayloadTooLarge");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_update_is_busy() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = slow_fixtures(tmp.path(), 1500);
    let out = tmp.path().join("dataset");
    let app = app_with(&fx, ServiceConfig::default());
    let (status, _) = post(
        &app,
        "/createBids",
        json!({"scans": {"01": {"01": "fast"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);

    let first = tokio::spawn({
        let app = app.clone();
        let doc = json!({"scans": {"02": {"01": "slow"}}, "output": out});
        async move { post(&app, "/updateBids", doc).await }
    });
    tokio::time::sleep(Duration::from_millis(300)).await;
    let (status, body) = post(
        &app,
        "/updateBids",
        json!({"scans": {"03": {"01": "fast"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error_code"], "Busy");

    let (status, _) = first.await.unwrap();
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn health_responds_during_conversion() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = slow_fixtures(tmp.path(), 1500);
    let out = tmp.path().join("dataset");
    let app = app_with(&fx, ServiceConfig::default());

    let started = Instant::now();
    let create = tokio::spawn({
        let app = app.clone();
        let doc = json!({"scans": {"01": {"01": "slow"}}, "output": out});
        async move { post(&app, "/createBids", doc).await }
    });
    tokio::time::sleep(Duration::from_millis(200)).await;
    let (status, _) = call(&app, "GET", "/health", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(started.elapsed() < Duration::from_millis(1200));
    assert!(!create.is_finished());
    assert_eq!(create.await.unwrap().0, StatusCode::CREATED);
}

#[tokio::test]
async fn request_timeout_maps_to_500() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = slow_fixtures(tmp.path(), 800);
    let config = ServiceConfig {
        request_timeout: Duration::from_millis(100),
        ..ServiceConfig::default()
    };
    let app = app_with(&fx, config);
    let out = tmp.path().join("dataset");
    let (status, body) = post(
        &app,
        "/createBids",
        json!({"scans": {"01": {"01": "slow"}}, "output": out}),
    )
    .await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(body["error_code"], "RequestTimeout");
}

#[tokio::test]
async fn cors_headers_for_configured_origin() {
    let config = ServiceConfig {
        allowed_origin: Some("http://localhost:5173".into()),
        ..ServiceConfig::default()
    };
    let app = app_with(&fixtures(), config);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/createBids")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
}
