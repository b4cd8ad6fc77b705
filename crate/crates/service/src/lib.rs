//! HTTP front end: `POST /createBids`, `POST /updateBids`, `GET /health`.
//!
//! Handlers parse the body with the library's request parser, run the
//! blocking dataset operation on the blocking pool and serialize the
//! resulting `DatasetReport` or `ErrorBody` unchanged.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bids_toolbox::{parse_request, ErrorBody, RequestKind, Toolbox, ToolboxError, VERSION};
use serde_json::json;
use tower_http::cors::CorsLayer;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_BODY_LIMIT: usize = 1024 * 1024;
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub request_timeout: Duration,
    pub body_limit: usize,
    /// Origin allowed to call the API from a browser; CORS is off when unset.
    pub allowed_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.parse().expect("default bind address parses"),
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
            body_limit: DEFAULT_BODY_LIMIT,
            allowed_origin: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    toolbox: Arc<Toolbox>,
    timeout: Duration,
}

pub fn router(toolbox: Toolbox, config: &ServiceConfig) -> Result<Router, header::InvalidHeaderValue> {
    let state = AppState {
        toolbox: Arc::new(toolbox),
        timeout: config.request_timeout,
    };
    let mut app = Router::new()
        .route("/createBids", post(create_bids))
        .route("/updateBids", post(update_bids))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(config.body_limit))
        .with_state(state);
    if let Some(origin) = &config.allowed_origin {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(HeaderValue::from_str(origin)?)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}

/// Binds and serves until the process is stopped.
pub async fn serve(toolbox: Toolbox, config: ServiceConfig) -> std::io::Result<()> {
    let app = router(toolbox, &config)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("allowed origin: {e}")))?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": VERSION }))
}

async fn create_bids(State(app): State<AppState>, body: Result<Bytes, BytesRejection>) -> Response {
    run(app, body, RequestKind::Create).await
}

async fn update_bids(State(app): State<AppState>, body: Result<Bytes, BytesRejection>) -> Response {
    run(app, body, RequestKind::Update).await
}

async fn run(app: AppState, body: Result<Bytes, BytesRejection>, kind: RequestKind) -> Response {
    let body = match body {
        Ok(b) => b,
        Err(rejection) => {
            let status = rejection.status();
            let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
                "PayloadTooLarge"
            } else {
                "MalformedBody"
            };
            return error_response(status, ErrorBody::new(code, rejection.body_text()));
        }
    };
    let req = match parse_request(&body, kind) {
        Ok(r) => r,
        Err(e) => return toolbox_error(&e.into()),
    };

    let toolbox = app.toolbox.clone();
    let output = req.output.clone();
    let task = tokio::task::spawn_blocking(move || match kind {
        RequestKind::Create => toolbox.create(&req),
        RequestKind::Update => toolbox.update(&req),
    });
    // The blocking task cannot be cancelled; on timeout it keeps the dataset
    // lock until it finishes on its own.
    match tokio::time::timeout(app.timeout, task).await {
        Ok(Ok(Ok(report))) => {
            tracing::info!(output, series = report.series, "{:?} ok", kind);
            let status = match kind {
                RequestKind::Create => StatusCode::CREATED,
                RequestKind::Update => StatusCode::OK,
            };
            (status, Json(report)).into_response()
        }
        Ok(Ok(Err(e))) => {
            tracing::warn!(output, code = e.code(), "{:?} failed: {e}", kind);
            toolbox_error(&e)
        }
        Ok(Err(join)) => {
            tracing::error!(output, "worker failed: {join}");
            error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody::new("Internal", format!("worker failed: {join}")),
            )
        }
        Err(_) => error_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorBody::new(
                "RequestTimeout",
                format!("request exceeded {:.0} s", app.timeout.as_secs_f64()),
            ),
        ),
    }
}

fn toolbox_error(e: &ToolboxError) -> Response {
    let status = StatusCode::from_u16(e.class().http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    error_response(status, e.to_body())
}

fn error_response(status: StatusCode, body: ErrorBody) -> Response {
    (status, Json(body)).into_response()
}
