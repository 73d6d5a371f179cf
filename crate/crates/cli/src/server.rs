//! HTTP shard service over an immutable index.
//!
//! `POST /query` takes a [`QueryRequest`] and answers with a
//! [`QueryResponse`]; `GET /health` reports the config fingerprint.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lshensemble::Ensemble;
use tokio::net::TcpListener;

use crate::error::{CliError, Result};
use crate::wire::{decode_signature, ErrorResponse, HealthResponse, QueryDiagnostics, QueryRequest, QueryResponse};

pub fn router(index: Arc<Ensemble>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .with_state(index)
}

pub fn health_of(index: &Ensemble) -> HealthResponse {
    HealthResponse {
        fingerprint: index.fingerprint(),
        num_perm: index.config().num_perm,
        seed: index.config().seed,
        indexed: index.len() as u64,
        partitions: index.partitioning().len(),
    }
}

async fn health(State(index): State<Arc<Ensemble>>) -> Json<HealthResponse> {
    Json(health_of(&index))
}

fn reject(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorResponse { error: message.into() })).into_response()
}

async fn query(State(index): State<Arc<Ensemble>>, body: Bytes) -> Response {
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return reject(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")),
    };
    let sig = match decode_signature(&req.signature) {
        Ok(s) => s,
        Err(e) => return reject(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if !(req.threshold > 0.0 && req.threshold <= 1.0) {
        return reject(StatusCode::BAD_REQUEST, format!("threshold must lie in (0, 1], got {}", req.threshold));
    }
    if req.query_size == Some(0) {
        return reject(StatusCode::BAD_REQUEST, "query_size must be at least 1");
    }
    let family = index.family();
    if sig.seed() != family.seed() || sig.num_perm() != family.num_perm() {
        let diagnostics = QueryDiagnostics {
            fingerprint: index.fingerprint(),
            mismatch: Some(format!(
                "signature has seed {} and {} permutations; index is {}",
                sig.seed(),
                sig.num_perm(),
                index.fingerprint()
            )),
            query_size: None,
            query_size_estimated: false,
            partitions: Vec::new(),
            elapsed_micros: 0,
        };
        return Json(QueryResponse { candidates: Vec::new(), diagnostics }).into_response();
    }
    let worker = index.clone();
    let outcome = tokio::task::spawn_blocking(move || worker.query_parallel(&sig, req.threshold, req.query_size)).await;
    match outcome {
        Ok(Ok(result)) => Json(QueryResponse {
            candidates: result.candidates,
            diagnostics: QueryDiagnostics {
                fingerprint: index.fingerprint(),
                mismatch: None,
                query_size: Some(result.query_size),
                query_size_estimated: result.query_size_estimated,
                partitions: result.partitions,
                elapsed_micros: result.elapsed.as_micros() as u64,
            },
        })
        .into_response(),
        Ok(Err(e)) => reject(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Binds `addr` (port 0 picks a free port) and returns the listener and
/// the address actually bound.
pub async fn bind(addr: &str) -> Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::io(format!("bind {addr}"), e))?;
    let local = listener
        .local_addr()
        .map_err(|e| CliError::io("local address", e))?;
    Ok((listener, local))
}

/// Serves until the task is dropped or the listener fails.
pub async fn serve(listener: TcpListener, index: Arc<Ensemble>) -> Result<()> {
    axum::serve(listener, router(index))
        .await
        .map_err(|e| CliError::io("serve", e))
}
