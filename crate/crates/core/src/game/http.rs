use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{
    BoardView, ExportFilter, Exported, FinishView, GameError, GameService, PlacementOutcome,
    SessionCreated,
};

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

struct ApiError(StatusCode, ErrorBody);

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        let status = match &e {
            GameError::UnknownSession(_)
            | GameError::UnknownJob(_)
            | GameError::UnknownMachine(_) => StatusCode::NOT_FOUND,
            GameError::JobNotVisible(_)
            | GameError::AlreadyPlaced(_)
            | GameError::InsufficientAllocation { .. }
            | GameError::DeadlinePassed
            | GameError::Finished(_) => StatusCode::CONFLICT,
            GameError::Ineligible { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            GameError::BadRequest(_) => StatusCode::BAD_REQUEST,
            GameError::Fixture(_) | GameError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(
            status,
            ErrorBody {
                code: e.code().to_string(),
                message: e.to_string(),
            },
        )
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        GameError::BadRequest(e.body_text()).into()
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        GameError::BadRequest(e.body_text()).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
struct CreateRequest {
    participant_id: String,
}

#[derive(Debug, Deserialize)]
struct PlaceRequest {
    job_id: String,
    machine_id: String,
}

async fn create_session(
    State(svc): State<Arc<GameService>>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(req) = body?;
    Ok((
        StatusCode::CREATED,
        Json(svc.create_session(&req.participant_id)?),
    ))
}

async fn board(
    State(svc): State<Arc<GameService>>,
    Path(id): Path<String>,
) -> ApiResult<BoardView> {
    Ok(Json(svc.board(&id)?))
}

async fn place(
    State(svc): State<Arc<GameService>>,
    Path(id): Path<String>,
    body: Result<Json<PlaceRequest>, JsonRejection>,
) -> ApiResult<PlacementOutcome> {
    let Json(req) = body?;
    Ok(Json(svc.place_job(&id, &req.job_id, &req.machine_id)?))
}

async fn finish(
    State(svc): State<Arc<GameService>>,
    Path(id): Path<String>,
) -> ApiResult<FinishView> {
    Ok(Json(svc.finish_session(&id)?.view()))
}

async fn export(
    State(svc): State<Arc<GameService>>,
    filter: Result<Query<ExportFilter>, QueryRejection>,
) -> ApiResult<Exported> {
    let Query(filter) = filter?;
    Ok(Json(svc.export(&filter)))
}

pub fn router(svc: Arc<GameService>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/board", get(board))
        .route("/sessions/{id}/placements", post(place))
        .route("/sessions/{id}/finish", post(finish))
        .route("/export", get(export))
        .with_state(svc)
}

/// Serves the game API on `listener` until the task is dropped.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Arc<GameService>,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).await
}
