//! Read-only HTTP query service.

use std::io::Write as _;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;
use serde_json::json;

use citeguard_core::pipeline::QueryResponseBody;
use citeguard_core::retrieval::RetrievalConfig;

use crate::Loaded;

struct AppState {
    loaded: Loaded,
    defaults: RetrievalConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    query: String,
    k: Option<usize>,
    tau: Option<f64>,
}

fn json_body(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error_body(status: StatusCode, message: impl std::fmt::Display) -> Response {
    let mut body = json!({ "error": message.to_string() }).to_string();
    body.push('\n');
    json_body(status, body)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let mut body = json!({
        "status": "ok",
        "docs": state.loaded.docs,
        "chunks": state.loaded.chunks,
    })
    .to_string();
    body.push('\n');
    json_body(StatusCode::OK, body)
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let cfg = RetrievalConfig {
        k: req.k.unwrap_or(state.defaults.k),
        tau: req.tau.unwrap_or(state.defaults.tau),
    };
    if let Err(e) = cfg.validate() {
        return error_body(StatusCode::BAD_REQUEST, e);
    }
    let worker = Arc::clone(&state);
    let result =
        tokio::task::spawn_blocking(move || worker.loaded.pipeline.answer(&req.query, &cfg)).await;
    match result {
        Ok(Ok(outcome)) => json_body(
            StatusCode::OK,
            QueryResponseBody::from_outcome(&outcome).to_wire(),
        ),
        Ok(Err(e)) if e.is_bad_request() => error_body(StatusCode::BAD_REQUEST, e),
        Ok(Err(e)) if e.is_provider_unavailable() => error_body(StatusCode::SERVICE_UNAVAILABLE, e),
        Ok(Err(e)) => error_body(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

pub(crate) fn router(loaded: Loaded, defaults: RetrievalConfig) -> Router {
    let state = Arc::new(AppState { loaded, defaults });
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/query", post(query))
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serves until SIGINT or SIGTERM, letting in-flight requests finish.
pub(crate) fn run(loaded: Loaded, defaults: RetrievalConfig, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        std::io::stdout().flush()?;
        axum::serve(listener, router(loaded, defaults))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .context("serving")
    })
}
