//! HTTP transport: one route per operation, binary frames in both directions.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode as HttpStatus};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;

use sandi_core::wire::{Message, Status, StatusCode};

use crate::service::{Route, Service};

pub const CONTENT_TYPE: &str = "application/octet-stream";

fn http_status(code: StatusCode) -> HttpStatus {
    match code {
        StatusCode::Ok => HttpStatus::OK,
        StatusCode::Malformed => HttpStatus::BAD_REQUEST,
        StatusCode::UnknownAccount | StatusCode::UnknownEpoch => HttpStatus::NOT_FOUND,
        StatusCode::Unsupported => HttpStatus::NOT_IMPLEMENTED,
        StatusCode::Internal => HttpStatus::INTERNAL_SERVER_ERROR,
        _ => HttpStatus::UNPROCESSABLE_ENTITY,
    }
}

fn respond(status: Status) -> Response {
    (
        http_status(status.code),
        [(header::CONTENT_TYPE, CONTENT_TYPE)],
        Message::Status(status).encode(),
    )
        .into_response()
}

async fn dispatch(service: Arc<Service>, route: Route, body: Bytes) -> Response {
    let status = tokio::task::spawn_blocking(move || service.handle(route, &body))
        .await
        .unwrap_or_else(|e| Status::error(StatusCode::Internal, e.to_string()));
    respond(status)
}

pub fn router(service: Arc<Service>) -> Router {
    Route::ALL
        .iter()
        .fold(Router::new(), |router, &route| {
            let handler =
                move |State(svc): State<Arc<Service>>, body: Bytes| dispatch(svc, route, body);
            let method = if route.is_get() {
                get(handler)
            } else {
                post(handler)
            };
            router.route(route.path(), method)
        })
        .with_state(service)
}

/// Serves until the listener fails or the task is dropped.
pub async fn serve(service: Arc<Service>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

/// Rolls finished epochs in the background; used with the system clock.
pub fn spawn_roller(service: Arc<Service>, period: Duration) -> tokio::task::JoinHandle<()> {
    let first = service.server().config().epoch_of(service.now());
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(period);
        loop {
            ticker.tick().await;
            let svc = service.clone();
            match tokio::task::spawn_blocking(move || svc.roll_due(first)).await {
                Ok(Ok(rolled)) => {
                    for epoch in rolled {
                        eprintln!("rolled epoch {epoch}");
                    }
                }
                Ok(Err(e)) => eprintln!("epoch roll failed: {e}"),
                Err(e) => eprintln!("epoch roll task failed: {e}"),
            }
        }
    })
}
