//! axum adapter: every request goes through [`Service::dispatch`] on the
//! blocking pool, since dispatch does file I/O under per-graph locks.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, Method as HttpMethod, StatusCode, Uri};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::Router;

use super::{Method, Request, Service};

async fn handle(State(service): State<Arc<Service>>, method: HttpMethod, uri: Uri, body: String) -> HttpResponse {
    let method = match method {
        HttpMethod::GET => Method::Get,
        HttpMethod::POST => Method::Post,
        _ => {
            return (StatusCode::METHOD_NOT_ALLOWED, "{\"error\":\"MethodNotAllowed\"}").into_response();
        }
    };
    let request = Request {
        method,
        path: uri.path().to_string(),
        query: uri.query().map(str::to_string),
        body,
    };
    let outcome = tokio::task::spawn_blocking(move || service.dispatch(&request)).await;
    match outcome {
        Ok(resp) => {
            let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, [(header::CONTENT_TYPE, "application/json")], resp.body.to_string()).into_response()
        }
        Err(_) => (StatusCode::INTERNAL_SERVER_ERROR, "{\"error\":\"Internal\"}").into_response(),
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new().fallback(handle).with_state(service)
}

/// Serves until the listener fails.
pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}

/// Like [`serve`] on an already bound listener.
pub async fn serve_on(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
