use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use crate::api::{handle_ner_request, parse_request, ApiError};
use crate::registry::ModelRegistry;

fn error_response(e: &ApiError) -> Response {
    let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(e.body())).into_response()
}

async fn ner(State(registry): State<Arc<ModelRegistry>>, body: Bytes) -> Response {
    let request = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    let result = tokio::task::spawn_blocking(move || handle_ner_request(&registry, &request)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(e) => error_response(&ApiError::Internal(e.to_string())),
    }
}

async fn models(State(registry): State<Arc<ModelRegistry>>) -> Response {
    Json(serde_json::json!({ "models": registry.names() })).into_response()
}

async fn health() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], r#"{"status":"ok"}"#).into_response()
}

pub fn router(registry: Arc<ModelRegistry>) -> Router {
    Router::new()
        .route("/ner", post(ner))
        .route("/models", get(models))
        .route("/health", get(health))
        .with_state(registry)
}

/// Binds `addr` and serves until the process receives Ctrl-C.
pub async fn serve(registry: Arc<ModelRegistry>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
