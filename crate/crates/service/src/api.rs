use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use esi_core::pipeline::AdvanceRequest;
use esi_core::{Error, ErrorCode, Store};
use serde::{Deserialize, Serialize};

use crate::ops::{self, parse_json, parse_json_or_default, parse_round};

/// Error body returned by every failing route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self {
            code: e.code(),
            message: e.to_string(),
            details: e.details(),
        }
    }
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    use ErrorCode::*;
    match code {
        NotFound => StatusCode::NOT_FOUND,
        OutOfOrder | WrongEvidence | RoundClosed | ConsensusNotReached | LeaseHeld => StatusCode::CONFLICT,
        InconsistentMatrix | DivergentSeries | Singular | NoConvergence | DivisionByZeroGuardTripped => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        Io | CorruptFile => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_for(self.code), Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct AppState {
    store: Arc<Store>,
}

/// Store calls block on file locks and disk, so they run off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> esi_core::Result<T> + Send + 'static,
{
    let store = Arc::clone(&state.store);
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError {
            code: ErrorCode::Io,
            message: format!("worker failed: {e}"),
            details: None,
        })?
        .map_err(ApiError::from)
}

fn is_csv(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"))
}

fn created<T: Serialize>(value: T) -> Response {
    (StatusCode::CREATED, Json(value)).into_response()
}

fn csv_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

pub fn router(store: Store) -> Router {
    let state = AppState { store: Arc::new(store) };
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/settings", put(set_settings))
        .route("/projects/{id}/advance", post(advance))
        .route("/projects/{id}/delphi/policy", put(set_policy))
        .route("/projects/{id}/delphi/tokens", post(issue_token))
        .route("/projects/{id}/delphi/rounds", post(open_round))
        .route("/projects/{id}/delphi/rounds/{n}", get(get_round))
        .route("/projects/{id}/delphi/rounds/{n}/responses", post(submit))
        .route("/projects/{id}/delphi/rounds/{n}/summary", get(summary))
        .route("/projects/{id}/delphi/rounds/{n}/decision", get(decision))
        .route("/projects/{id}/requirements", put(set_requirements))
        .route("/projects/{id}/indicators", put(set_indicators))
        .route("/projects/{id}/dematel", post(run_dematel))
        .route("/projects/{id}/dematel/result", get(dematel_result))
        .route("/projects/{id}/ahp", post(init_ahp))
        .route("/projects/{id}/ahp/hierarchy", get(get_hierarchy).put(set_hierarchy))
        .route("/projects/{id}/ahp/matrices/{node}", get(get_matrix).put(put_matrix))
        .route("/projects/{id}/ahp/ranking", get(ranking))
        .route("/projects/{id}/scorecard", get(get_scorecard).put(put_scorecard))
        .route("/projects/{id}/scorecard/seed", post(seed_scorecard))
        .route("/projects/{id}/scorecard/links", post(add_link))
        .route("/projects/{id}/scorecard/kpis", post(apply_indicators))
        .route("/projects/{id}/scorecard/validation", get(validation))
        .route("/projects/{id}/scorecard/map", get(link_map))
        .route("/projects/{id}/scorecard/gaps", get(gaps))
        .route("/projects/{id}/sdm/compile", post(compile))
        .route("/projects/{id}/sdm/model", get(get_model).put(put_model))
        .route("/projects/{id}/sdm/simulate", post(simulate))
        .route("/projects/{id}/sdm/trajectories/{run}", get(trajectory))
        .route("/sdm/eval", post(eval))
        .fallback(not_found)
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError {
        code: ErrorCode::NotFound,
        message: "no such route".into(),
        details: None,
    }
}

async fn create_project(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let body: ops::NewProject = parse_json_or_default(&body)?;
    Ok(created(blocking(&s, move |st| ops::create_project(st, body)).await?))
}

async fn list_projects(State(s): State<AppState>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, ops::list_projects).await?).into_response())
}

async fn get_project(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::get_project(st, &id)).await?).into_response())
}

async fn set_settings(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let settings = parse_json(&body)?;
    Ok(Json(blocking(&s, move |st| ops::set_settings(st, &id, settings)).await?).into_response())
}

async fn advance(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let request: AdvanceRequest = parse_json(&body)?;
    Ok(Json(blocking(&s, move |st| ops::advance(st, &id, request)).await?).into_response())
}

async fn set_policy(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let policy = parse_json(&body)?;
    Ok(Json(blocking(&s, move |st| ops::set_policy(st, &id, policy)).await?).into_response())
}

async fn issue_token(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(created(blocking(&s, move |st| ops::issue_token(st, &id)).await?))
}

async fn open_round(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: ops::OpenRound = parse_json_or_default(&body)?;
    Ok(created(blocking(&s, move |st| ops::open_round(st, &id, body)).await?))
}

async fn get_round(State(s): State<AppState>, Path((id, n)): Path<(String, String)>) -> ApiResult<Response> {
    let n = parse_round(&n)?;
    Ok(Json(blocking(&s, move |st| ops::get_round(st, &id, n)).await?).into_response())
}

async fn submit(
    State(s): State<AppState>,
    Path((id, n)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let n = parse_round(&n)?;
    let acks = if is_csv(&headers) {
        blocking(&s, move |st| ops::import_csv(st, &id, n, &body)).await?
    } else {
        let submission: ops::Submission = parse_json(&body)?;
        blocking(&s, move |st| ops::submit(st, &id, n, submission)).await?
    };
    Ok(created(acks))
}

async fn summary(State(s): State<AppState>, Path((id, n)): Path<(String, String)>) -> ApiResult<Response> {
    let n = parse_round(&n)?;
    Ok(Json(blocking(&s, move |st| ops::summary(st, &id, n)).await?).into_response())
}

async fn decision(State(s): State<AppState>, Path((id, n)): Path<(String, String)>) -> ApiResult<Response> {
    let n = parse_round(&n)?;
    Ok(Json(blocking(&s, move |st| ops::decision(st, &id, n)).await?).into_response())
}

async fn set_requirements(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let requirements = parse_json(&body)?;
    Ok(Json(blocking(&s, move |st| ops::set_requirements(st, &id, requirements)).await?).into_response())
}

async fn set_indicators(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let indicators = if is_csv(&headers) {
        ops::read_indicators_csv(&body)?
    } else {
        parse_json(&body)?
    };
    Ok(Json(blocking(&s, move |st| ops::set_indicators(st, &id, indicators)).await?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct DematelQuery {
    alpha: Option<f64>,
    scale: Option<f64>,
}

async fn run_dematel(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<DematelQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let (direct, mut opts) = if is_csv(&headers) {
        (ops::read_dematel_csv(&body)?, Default::default())
    } else {
        let input: ops::DematelInput = parse_json(&body)?;
        (input.direct()?, input.options)
    };
    opts.alpha = q.alpha.or(opts.alpha);
    opts.scale = q.scale.or(opts.scale);
    Ok(Json(blocking(&s, move |st| ops::run_dematel(st, &id, direct, opts)).await?).into_response())
}

async fn dematel_result(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::dematel_result(st, &id)).await?).into_response())
}

async fn init_ahp(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: ops::AhpInit = parse_json(&body)?;
    Ok(created(blocking(&s, move |st| ops::init_ahp(st, &id, body)).await?))
}

async fn get_hierarchy(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::get_hierarchy(st, &id)).await?).into_response())
}

async fn set_hierarchy(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let h = parse_json(&body)?;
    Ok(Json(blocking(&s, move |st| ops::set_hierarchy(st, &id, h)).await?).into_response())
}

async fn get_matrix(State(s): State<AppState>, Path((id, node)): Path<(String, String)>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::get_matrix(st, &id, &node)).await?).into_response())
}

async fn put_matrix(
    State(s): State<AppState>,
    Path((id, node)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let input = if is_csv(&headers) {
        ops::read_matrix_csv(&body)?
    } else {
        parse_json(&body)?
    };
    Ok(Json(blocking(&s, move |st| ops::put_matrix(st, &id, &node, input)).await?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct RankingQuery {
    #[serde(default)]
    force: bool,
}

async fn ranking(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RankingQuery>,
) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::ranking(st, &id, q.force)).await?).into_response())
}

async fn get_scorecard(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::get_scorecard(st, &id)).await?).into_response())
}

async fn put_scorecard(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let card = parse_json(&body)?;
    Ok(Json(blocking(&s, move |st| ops::put_scorecard(st, &id, card)).await?).into_response())
}

async fn seed_scorecard(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(created(blocking(&s, move |st| ops::seed_scorecard(st, &id)).await?))
}

async fn add_link(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let link = parse_json(&body)?;
    Ok(created(blocking(&s, move |st| ops::add_link(st, &id, link)).await?))
}

async fn apply_indicators(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let indicators = if is_csv(&headers) {
        ops::read_indicators_csv(&body)?
    } else {
        parse_json(&body)?
    };
    Ok(Json(blocking(&s, move |st| ops::apply_indicators(st, &id, indicators)).await?).into_response())
}

async fn validation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::validation(st, &id)).await?).into_response())
}

async fn link_map(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::link_map(st, &id)).await?).into_response())
}

async fn gaps(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::gaps(st, &id)).await?).into_response())
}

async fn compile(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let opts: Option<esi_core::sdm::CompileOptions> = parse_json_or_default(&body)?;
    Ok(Json(blocking(&s, move |st| ops::compile(st, &id, opts)).await?).into_response())
}

async fn get_model(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |st| ops::get_model(st, &id)).await?).into_response())
}

async fn put_model(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let model = parse_json(&body)?;
    Ok(Json(blocking(&s, move |st| ops::put_model(st, &id, model)).await?).into_response())
}

async fn simulate(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let scenario = parse_json(&body)?;
    Ok(created(blocking(&s, move |st| ops::simulate(st, &id, scenario)).await?))
}

#[derive(Debug, Default, Deserialize)]
struct TrajectoryQuery {
    format: Option<String>,
}

async fn trajectory(
    State(s): State<AppState>,
    Path((id, run)): Path<(String, String)>,
    Query(q): Query<TrajectoryQuery>,
) -> ApiResult<Response> {
    let saved = blocking(&s, move |st| ops::trajectory(st, &id, &run)).await?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(saved).into_response()),
        Some("csv") => Ok(csv_response(ops::trajectory_csv(&saved)?)),
        Some(other) => Err(ops::malformed(format!("unknown format {other:?}; use json or csv")).into()),
    }
}

async fn eval(body: Bytes) -> ApiResult<Response> {
    let input: ops::EvalInput = parse_json(&body)?;
    Ok(Json(ops::eval(&input)?).into_response())
}
