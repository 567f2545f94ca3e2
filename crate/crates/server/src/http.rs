use crate::engine::{Engine, ServiceError};
use crate::wire::{CreateSession, ErrorBody, SubmitScribbles};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use std::sync::Arc;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) | ServiceError::OutOfBounds(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let pixels = match &self {
            ServiceError::OutOfBounds(px) => Some(px.clone()),
            _ => None,
        };
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
                pixels,
            }),
        )
            .into_response()
    }
}

/// Runs a blocking engine call off the async workers.
async fn blocking<T: Send + 'static>(
    engine: Arc<Engine>,
    f: impl FnOnce(&Engine) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn create(
    State(e): State<Arc<Engine>>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(rej) => return ServiceError::BadRequest(rej.body_text()).into_response(),
    };
    match blocking(e, move |e| e.create(&req)).await {
        Ok(v) => (StatusCode::CREATED, Json(v)).into_response(),
        Err(err) => err.into_response(),
    }
}

async fn show(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> Response {
    blocking(e, move |e| e.get(&id))
        .await
        .map(Json)
        .into_response()
}

async fn scribbles(
    State(e): State<Arc<Engine>>,
    Path(id): Path<String>,
    body: Result<Json<SubmitScribbles>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(rej) => return ServiceError::BadRequest(rej.body_text()).into_response(),
    };
    blocking(e, move |e| e.add_scribbles(&id, &req))
        .await
        .map(Json)
        .into_response()
}

async fn refine(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> Response {
    blocking(e, move |e| e.refine(&id))
        .await
        .map(Json)
        .into_response()
}

#[derive(Deserialize)]
struct MaskQuery {
    format: Option<String>,
}

/// JSON by default; `?format=pgm` returns the file itself.
async fn mask(
    State(e): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(q): Query<MaskQuery>,
) -> Response {
    match q.format.as_deref() {
        None | Some("json") => blocking(e, move |e| e.mask(&id))
            .await
            .map(Json)
            .into_response(),
        Some("pgm") => match blocking(e, move |e| e.mask_file(&id)).await {
            Ok(bytes) => {
                ([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response()
            }
            Err(err) => err.into_response(),
        },
        Some(other) => {
            ServiceError::BadRequest(format!("unknown mask format {other:?}")).into_response()
        }
    }
}

async fn delete(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> Response {
    match blocking(e, move |e| e.delete(&id)).await {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(err) => err.into_response(),
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show).delete(delete))
        .route("/sessions/{id}/scribbles", post(scribbles))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/mask", get(mask))
        .with_state(engine)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
