//! HTTP backend for the labeling grid.
//!
//! `GET /api/next?annotator=ID` serves the next graph as eight image URLs in a
//! fresh random order plus a signed display token; `POST /api/label` and
//! `POST /api/skip` record the annotator's decision; `GET /api/stats` reports
//! corpus statistics; `GET /api/image` streams a cached PNG. All store
//! mutations go through one writer thread.

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use thiserror::Error;

mod state;
pub mod token;

pub use state::{
    Clock, LabelAck, LabelRequest, Progress, RasterCache, ServiceConfig, ServiceCorpus, ServiceHandle, SkipAck,
    SkipRequest, SteppingClock, SystemClock, TaskPayload,
};
pub use token::{DisplayClaims, TokenSigner};

/// Environment variable holding the token-signing secret.
pub const SECRET_ENV: &str = "LAYOUTPREF_SECRET";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("annotator id is required")]
    MissingAnnotator,
    #[error("display token does not verify")]
    BadToken,
    #[error("display token was issued for a different graph or annotator")]
    TokenMismatch,
    #[error("position {0} is outside 1..8")]
    BadPosition(usize),
    #[error("unknown graph {0}")]
    UnknownGraph(String),
    #[error("annotator {annotator} already labeled {graph_id}")]
    AlreadyLabeled { annotator: String, graph_id: String },
    #[error("render failed: {0}")]
    Render(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("service is shutting down")]
    Unavailable,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::MissingAnnotator | Self::BadPosition(_) => StatusCode::BAD_REQUEST,
            Self::BadToken | Self::TokenMismatch => StatusCode::FORBIDDEN,
            Self::UnknownGraph(_) => StatusCode::NOT_FOUND,
            Self::AlreadyLabeled { .. } => StatusCode::CONFLICT,
            Self::Render(_) | Self::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Self::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    #[serde(default)]
    annotator: String,
}

#[derive(Debug, Deserialize)]
struct ImageQuery {
    token: String,
    position: usize,
}

async fn next(State(h): State<ServiceHandle>, Query(q): Query<NextQuery>) -> Result<Response, ServiceError> {
    Ok(match h.next(&q.annotator).await? {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn label(State(h): State<ServiceHandle>, Json(req): Json<LabelRequest>) -> Result<Json<LabelAck>, ServiceError> {
    h.label(req).await.map(Json)
}

async fn skip(State(h): State<ServiceHandle>, Json(req): Json<SkipRequest>) -> Result<Json<SkipAck>, ServiceError> {
    h.skip(req).await.map(Json)
}

async fn stats(State(h): State<ServiceHandle>) -> Result<Response, ServiceError> {
    Ok(Json(h.stats().await?).into_response())
}

async fn image(State(h): State<ServiceHandle>, Query(q): Query<ImageQuery>) -> Result<Response, ServiceError> {
    let png = h.image(&q.token, q.position).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub fn router(handle: ServiceHandle) -> Router {
    Router::new()
        .route("/api/next", get(next))
        .route("/api/label", post(label))
        .route("/api/skip", post(skip))
        .route("/api/stats", get(stats))
        .route("/api/image", get(image))
        .with_state(handle)
}

/// Binds and serves until ctrl-c.
pub async fn serve(handle: ServiceHandle, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(handle))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
