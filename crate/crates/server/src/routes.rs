//! REST routes. Every handler runs its core call on the blocking pool.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use t2i_audit_core::arena::{BattleRecord, BattleView};
use t2i_audit_core::orchestrator::JobSummary;
use t2i_audit_core::session::{ModelOutputs, WorkflowStage};
use t2i_audit_core::Platform;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::error::ApiError;

type AppState = Arc<Platform>;
type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("handler panicked: {e}")))?
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("INVALID_BODY", e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub prompt: String,
    /// Defaults to every enabled model; the first is revealed alone.
    #[serde(default)]
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub question_id: String,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OutputsView {
    pub session_id: String,
    pub stage: WorkflowStage,
    pub outputs: IndexMap<String, ModelOutputs>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusView {
    pub session_id: String,
    pub stage: WorkflowStage,
    pub jobs: IndexMap<String, JobSummary>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateBattle {
    pub prompt: String,
    /// Defaults to every enabled model.
    #[serde(default)]
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteBody {
    /// A display label or `tie`.
    pub choice: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VoteResult {
    pub record: BattleRecord,
    pub battle: BattleView,
    /// Elo of both models after the vote.
    pub elo: IndexMap<String, f64>,
}

pub fn router(platform: Arc<Platform>, cors_origin: Option<&str>) -> Router {
    let router = Router::new()
        .route("/healthz", get(healthz))
        .route("/models", get(models))
        .route("/questions", get(questions))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(record_answer))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/outputs", get(outputs))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/report", post(assemble_report))
        .route("/images/{id}", get(image))
        .route("/reports/{id}", get(report))
        .route("/reports/{id}/publish", post(publish))
        .route("/battles", post(create_battle))
        .route("/battles/{id}", get(battle))
        .route("/battles/{id}/vote", post(vote))
        .route("/leaderboard", get(leaderboard))
        .fallback(|| async { ApiError::not_found("NOT_FOUND", "no such route") })
        .with_state(platform);
    match cors_origin {
        Some(origin) => router.layer(cors(origin)),
        None => router,
    }
}

fn cors(origin: &str) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    match origin {
        "*" => layer.allow_origin(Any),
        o => match HeaderValue::from_str(o) {
            Ok(v) => layer.allow_origin(AllowOrigin::exact(v)),
            Err(_) => layer,
        },
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn models(State(p): State<AppState>) -> impl IntoResponse {
    Json(p.registry.all().to_vec())
}

async fn questions(State(p): State<AppState>) -> impl IntoResponse {
    Json(p.sessions.catalog().all().to_vec())
}

async fn create_session(State(p): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse(&body)?;
    let session = blocking(move || {
        let models = req.models.unwrap_or_else(|| p.registry.enabled_ids());
        Ok(p.sessions.create_session(&req.prompt, &models)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = blocking(move || Ok(p.sessions.get(&id)?)).await?;
    Ok(Json(s).into_response())
}

async fn record_answer(
    State(p): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: AnswerBody = parse(&body)?;
    let s =
        blocking(move || Ok(p.sessions.record_answer(&id, &req.question_id, &req.text)?)).await?;
    Ok(Json(s).into_response())
}

async fn advance(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = blocking(move || Ok(p.sessions.advance_stage(&id)?)).await?;
    Ok(Json(s).into_response())
}

async fn outputs(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(move || {
        let stage = p.sessions.get(&id)?.stage;
        let outputs = p.sessions.visible_outputs(&id)?;
        Ok(OutputsView {
            session_id: id,
            stage,
            outputs,
        })
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn status(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(move || {
        let stage = p.sessions.get(&id)?.stage;
        let jobs = p.orchestrator.job_status(&id).unwrap_or_default();
        Ok(StatusView {
            session_id: id,
            stage,
            jobs,
        })
    })
    .await?;
    Ok(Json(view).into_response())
}

/// Returns the session's report, assembling it if it is not stored yet.
async fn assemble_report(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let report = blocking(move || Ok(p.sessions.assemble_report(&id)?)).await?;
    Ok(Json(report).into_response())
}

/// Images are only served once some session holding them has revealed their
/// model; anything else is indistinguishable from a missing image.
async fn image(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        if !p.image_visible(&id) {
            return Err(ApiError::not_found(
                "IMAGE_NOT_FOUND",
                format!("image `{id}` not found"),
            ));
        }
        let media_type = p
            .store
            .record(&id)
            .map(|r| r.media_type)
            .unwrap_or_else(|| "application/octet-stream".into());
        let bytes = p.store.get(&id)?;
        Ok(([(header::CONTENT_TYPE, media_type)], bytes).into_response())
    })
    .await
}

fn format_param(q: &HashMap<String, String>) -> String {
    q.get("format").cloned().unwrap_or_else(|| "json".into())
}

async fn report(
    State(p): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let format = format_param(&q);
    blocking(move || {
        let fmt = format
            .parse::<t2i_audit_core::report::ExportFormat>()
            .map_err(ApiError::from)?;
        let bytes = p.reports.export(&id, fmt)?;
        Ok(([(header::CONTENT_TYPE, fmt.media_type())], bytes).into_response())
    })
    .await
}

async fn publish(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let post = blocking(move || Ok(p.reports.publish(&id, p.forum.as_ref())?)).await?;
    Ok(Json(post).into_response())
}

async fn create_battle(State(p): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateBattle = parse(&body)?;
    let view = blocking(move || {
        let pool = req.models.unwrap_or_else(|| p.registry.enabled_ids());
        let presented = p.arena.create_battle(&req.prompt, &pool)?;
        Ok(p.arena.battle(&presented.battle_id)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn battle(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(move || Ok(p.arena.battle(&id)?)).await?;
    Ok(Json(view).into_response())
}

async fn vote(
    State(p): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: VoteBody = parse(&body)?;
    let result = blocking(move || {
        let record = p.arena.record_vote(&id, &req.choice)?;
        let battle = p.arena.battle(&id)?;
        let elo = [&record.model_a, &record.model_b]
            .into_iter()
            .map(|m| (m.clone(), p.arena.elo(m)))
            .collect();
        Ok(VoteResult {
            record,
            battle,
            elo,
        })
    })
    .await?;
    Ok(Json(result).into_response())
}

async fn leaderboard(
    State(p): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let format = format_param(&q);
    if format != "json" && format != "csv" {
        return Err(ApiError::bad_request(
            "UNSUPPORTED_FORMAT",
            format!("unsupported leaderboard format `{format}`"),
        ));
    }
    blocking(move || {
        let board = p.arena.leaderboard();
        Ok(if format == "csv" {
            let csv = t2i_audit_core::arena::to_csv(&board.ratings);
            ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response()
        } else {
            Json(board).into_response()
        })
    })
    .await
}
