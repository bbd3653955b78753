//! JSON HTTP API over [`SessionManager`].

use std::sync::Arc;

use actowl_core::service::{AnswerRequest, ApiError, CreateSessionRequest, SessionManager};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/scenarios", get(list_scenarios))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/ask", post(ask))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/metrics.csv", get(metrics))
        .fallback(not_found)
        .with_state(manager)
}

struct Failure(ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

type Reply<T> = Result<T, Failure>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| Failure(ApiError::bad_request(format!("invalid request body: {e}"))))
}

/// Inference runs off the async workers.
async fn blocking<T, F>(f: F) -> Reply<T>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(Failure),
        Err(e) => Err(Failure(ApiError {
            code: "internal_error".into(),
            message: e.to_string(),
            detail: None,
            status: 500,
        })),
    }
}

fn json<T: Serialize>(status: StatusCode, value: T) -> Response {
    (status, Json(value)).into_response()
}

async fn list_scenarios(State(m): State<Arc<SessionManager>>) -> Response {
    json(StatusCode::OK, m.scenario_names())
}

async fn create_session(State(m): State<Arc<SessionManager>>, body: Bytes) -> Reply<Response> {
    let req: CreateSessionRequest = parse_body(&body)?;
    let view = blocking(move || m.create_session(&req.scenario, req.config)).await?;
    Ok(json(StatusCode::CREATED, view))
}

async fn get_state(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Reply<Response> {
    let view = m.get_state(&id)?;
    Ok(json(StatusCode::OK, view.as_ref()))
}

async fn ask(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Reply<Response> {
    let q = blocking(move || m.ask_next(&id)).await?;
    Ok(json(StatusCode::OK, q))
}

async fn answer(State(m): State<Arc<SessionManager>>, Path(id): Path<String>, body: Bytes) -> Reply<Response> {
    let req: AnswerRequest = parse_body(&body)?;
    let step = blocking(move || m.submit_answer(&id, &req.text, &req.responding_user)).await?;
    Ok(json(StatusCode::OK, step))
}

async fn metrics(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Reply<Response> {
    let csv = m.metrics_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn not_found() -> Failure {
    Failure(ApiError {
        code: "not_found".into(),
        message: "no such route".into(),
        detail: None,
        status: 404,
    })
}
