use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Json;
use misattrib_core::corpus::Split;
use misattrib_core::evalrun::{run_evaluation, EvalConfig, EvalContext, EvalMode};
use misattrib_core::gateway::CassetteMode;
use misattrib_core::label::{Locale, Misattribution, Score};
use misattrib_core::pairwise::{build_pairwise_study, Choice, SubsetRule};
use misattrib_core::registry::resolve_backend;
use misattrib_core::store::StoreState;
use misattrib_core::workflow::{QcMode, QcVerdict, Role};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::auth::{verify_profile, Session};
use crate::{json_response, replay, request_key, ApiError, AppState};

type App = State<Arc<AppState>>;
type ApiResult = Result<Json<Value>, ApiError>;

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

fn parse_body<B: DeserializeOwned>(body: &[u8]) -> Result<B, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn require_expert(session: &Session) -> Result<(), ApiError> {
    if session.role == Role::SeniorExpert {
        Ok(())
    } else {
        Err(ApiError::forbidden("NotExpert", format!("{} is not a senior expert", session.annotator)))
    }
}

/// Authenticates, replays a cached reply for a repeated request, otherwise
/// applies `f` to the store, persists, and caches the reply.
fn mutate<B, F>(app: &AppState, headers: &HeaderMap, uri: &Uri, body: &Bytes, f: F) -> Response
where
    B: DeserializeOwned,
    F: FnOnce(&mut StoreState, &Session, B) -> Result<Value, ApiError>,
{
    let session = match app.tokens.authenticate(headers) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let key = request_key("POST", uri.path(), &session.annotator, body);
    let mut inner = app.inner.lock().unwrap();
    if let Some(reply) = inner.replies.get(&key) {
        return replay(reply.clone());
    }
    let result = parse_body::<B>(body).and_then(|req| {
        verify_profile(&inner.store.workflow, &session)?;
        let mut draft = inner.store.clone();
        let value = f(&mut draft, &session, req)?;
        if let Some(file) = &app.file {
            file.save(&draft)?;
        }
        inner.store = draft;
        Ok(value)
    });
    match result {
        Ok(value) => {
            let (resp, reply) = json_response(StatusCode::OK, &value);
            inner.replies.insert(key, reply);
            resp
        }
        Err(e) => e.into_response(),
    }
}

fn read<F>(app: &AppState, headers: &HeaderMap, f: F) -> ApiResult
where
    F: FnOnce(&StoreState, &Session) -> Result<Value, ApiError>,
{
    let session = app.tokens.authenticate(headers)?;
    let inner = app.inner.lock().unwrap();
    f(&inner.store, &session).map(Json)
}

pub async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
pub struct ItemQuery {
    cursor: Option<String>,
    limit: Option<usize>,
    split: Option<Split>,
}

pub async fn list_items(State(app): App, headers: HeaderMap, Query(q): Query<ItemQuery>) -> ApiResult {
    read(&app, &headers, |store, _| {
        let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
        let mut page: Vec<_> = store
            .corpus
            .items()
            .filter(|i| q.cursor.as_ref().is_none_or(|c| i.id.as_str() > c.as_str()))
            .filter(|i| q.split.is_none_or(|s| s == i.split))
            .take(limit + 1)
            .collect();
        let more = page.len() > limit;
        page.truncate(limit);
        let next_cursor = if more { page.last().map(|i| i.id.clone()) } else { None };
        Ok(json!({"items": page, "next_cursor": next_cursor}))
    })
}

pub async fn get_item(State(app): App, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    read(&app, &headers, |store, _| {
        let item = store.corpus.item(&id).ok_or_else(|| ApiError::not_found("UnknownItem", format!("no item {id}")))?;
        Ok(json!({"item": item, "gold": store.corpus.gold(&id)}))
    })
}

/// The caller's next task. Other annotators' labels are not shown.
pub async fn next_task(State(app): App, headers: HeaderMap) -> ApiResult {
    read(&app, &headers, |store, session| {
        let Some(task) = store.workflow.next_task_for(&session.annotator) else {
            return Ok(json!({"task": null}));
        };
        Ok(json!({"task": {
            "item_id": task.item_id,
            "round": task.round,
            "state": task.state,
            "item": store.corpus.item(&task.item_id),
        }}))
    })
}

#[derive(Deserialize)]
pub struct LabelRequest {
    item_id: String,
    score: Score,
    misattribution: Misattribution,
    #[serde(default)]
    timestamp: u64,
}

pub async fn submit_annotation(State(app): App, headers: HeaderMap, uri: Uri, body: Bytes) -> Response {
    mutate(&app, &headers, &uri, &body, |store, session, req: LabelRequest| {
        let task = store.workflow.submit_annotation(&req.item_id, &session.annotator, req.score, req.misattribution, req.timestamp)?;
        Ok(json!({"item_id": task.item_id, "state": task.state, "annotations": task.annotations.len()}))
    })
}

pub async fn adjudication_queue(State(app): App, headers: HeaderMap) -> ApiResult {
    read(&app, &headers, |store, session| {
        require_expert(session)?;
        Ok(json!({"tasks": store.workflow.adjudication_queue()}))
    })
}

pub async fn adjudicate(State(app): App, headers: HeaderMap, uri: Uri, body: Bytes) -> Response {
    mutate(&app, &headers, &uri, &body, |store, session, req: LabelRequest| {
        let task = store.workflow.adjudicate(&req.item_id, &session.annotator, req.score, req.misattribution, req.timestamp)?;
        Ok(json!({"item_id": task.item_id, "state": task.state, "resolved": task.resolved}))
    })
}

pub async fn list_batches(State(app): App, headers: HeaderMap) -> ApiResult {
    read(&app, &headers, |store, _| Ok(json!({"batches": store.workflow.batches.values().collect::<Vec<_>>()})))
}

pub async fn get_batch(State(app): App, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    read(&app, &headers, |store, _| Ok(json!(store.workflow.batch(&id)?)))
}

#[derive(Deserialize)]
pub struct StartQcRequest {
    seed: u64,
    #[serde(default)]
    mode: QcMode,
}

pub async fn start_qc(State(app): App, Path(id): Path<String>, headers: HeaderMap, uri: Uri, body: Bytes) -> Response {
    mutate(&app, &headers, &uri, &body, |store, session, req: StartQcRequest| {
        require_expert(session)?;
        Ok(json!(store.workflow.start_qc(&id, req.seed, req.mode)?))
    })
}

#[derive(Deserialize)]
pub struct VerdictRequest {
    verdicts: BTreeMap<String, QcVerdict>,
}

pub async fn submit_verdicts(State(app): App, Path(id): Path<String>, headers: HeaderMap, uri: Uri, body: Bytes) -> Response {
    mutate(&app, &headers, &uri, &body, |store, session, req: VerdictRequest| {
        Ok(json!(store.workflow.submit_qc_verdicts(&id, &session.annotator, &req.verdicts)?))
    })
}

#[derive(Deserialize)]
pub struct EvalRequest {
    backend: String,
    split: Split,
    #[serde(default)]
    locale: Option<Locale>,
    #[serde(default)]
    mode: EvalMode,
    #[serde(default)]
    replicates: Option<u32>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    cassette_mode: Option<CassetteMode>,
}

/// Runs an evaluation to completion and stores the run.
pub async fn trigger_eval(State(app): App, headers: HeaderMap, uri: Uri, body: Bytes) -> Response {
    let prepared = (|| {
        let session = app.tokens.authenticate(&headers)?;
        require_expert(&session)?;
        let key = request_key("POST", uri.path(), &session.annotator, &body);
        let inner = app.inner.lock().unwrap();
        if let Some(reply) = inner.replies.get(&key) {
            return Ok(Err(replay(reply.clone())));
        }
        verify_profile(&inner.store.workflow, &session)?;
        let req: EvalRequest = parse_body(&body)?;
        let mut config = EvalConfig::new(req.backend, req.split);
        config.locale = req.locale;
        config.mode = req.mode;
        config.seed = req.seed;
        if let Some(r) = req.replicates {
            config.replicates = r;
        }
        if let Some(m) = req.cassette_mode {
            config.cassette_mode = m;
        }
        Ok(Ok((key, config, inner.store.corpus.clone())))
    })();
    let (key, config, corpus) = match prepared {
        Ok(Ok(p)) => p,
        Ok(Err(cached)) => return cached,
        Err(e) => return ApiError::into_response(e),
    };

    let worker = app.clone();
    let run = tokio::task::spawn_blocking(move || {
        let backend = resolve_backend(
            &config.backend,
            &corpus,
            &worker.templates,
            &worker.taxonomy,
            config.seed,
            worker.backends.as_ref(),
            config.cassette_mode,
        )
        .map_err(ApiError::from)?;
        let ctx = EvalContext {
            corpus: &corpus,
            taxonomy: &worker.taxonomy,
            templates: &worker.templates,
            gateway: &worker.gateway,
            backend: backend.as_ref(),
        };
        run_evaluation(&ctx, &config).map_err(ApiError::from)
    })
    .await
    .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())));

    let record = match run {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let mut inner = app.inner.lock().unwrap();
    let mut draft = inner.store.clone();
    let value = json!({"run_id": record.run_id, "report": record.report});
    draft.runs.insert(record.run_id.clone(), record);
    if let Some(file) = &app.file {
        if let Err(e) = file.save(&draft) {
            return ApiError::from(e).into_response();
        }
    }
    inner.store = draft;
    let (resp, reply) = json_response(StatusCode::OK, &value);
    inner.replies.insert(key, reply);
    resp
}

pub async fn list_evals(State(app): App, headers: HeaderMap) -> ApiResult {
    read(&app, &headers, |store, _| {
        let runs: Vec<Value> = store
            .runs
            .values()
            .map(|r| json!({"run_id": r.run_id, "backend": r.report.config.backend, "split": r.report.config.split, "mean": r.report.mean}))
            .collect();
        Ok(json!({"runs": runs}))
    })
}

fn unknown_run(id: &str) -> ApiError {
    ApiError::not_found("UnknownRun", format!("no run {id}"))
}

pub async fn get_eval(State(app): App, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    read(&app, &headers, |store, _| {
        let r = store.runs.get(&id).ok_or_else(|| unknown_run(&id))?;
        Ok(json!({"run_id": r.run_id, "report": r.report}))
    })
}

#[derive(Deserialize)]
pub struct ReportQuery {
    format: Option<String>,
}

pub async fn get_report(State(app): App, headers: HeaderMap, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> ApiResult {
    read(&app, &headers, |store, _| {
        let r = store.runs.get(&id).ok_or_else(|| unknown_run(&id))?;
        let format = q.format.as_deref().unwrap_or("markdown");
        let body = match format {
            "markdown" => r.report.to_markdown(),
            "text" => r.report.to_text(),
            "json" => r.report.to_json(),
            other => return Err(ApiError::bad_request(format!("unknown report format {other:?}"))),
        };
        Ok(json!({"run_id": id, "format": format, "body": body}))
    })
}

#[derive(Deserialize)]
pub struct StudyRequest {
    id: String,
    run_a: String,
    run_b: String,
    #[serde(default)]
    subset: SubsetRule,
    #[serde(default)]
    seed: u64,
}

pub async fn create_study(State(app): App, headers: HeaderMap, uri: Uri, body: Bytes) -> Response {
    mutate(&app, &headers, &uri, &body, |store, session, req: StudyRequest| {
        require_expert(session)?;
        if store.studies.contains_key(&req.id) {
            return Err(ApiError::new(StatusCode::CONFLICT, "StudyExists", format!("study {} exists", req.id)));
        }
        let a = store.runs.get(&req.run_a).ok_or_else(|| unknown_run(&req.run_a))?;
        let b = store.runs.get(&req.run_b).ok_or_else(|| unknown_run(&req.run_b))?;
        let study = build_pairwise_study(req.id.clone(), a, b, &store.corpus, req.subset, req.seed)?;
        let n = study.tasks.len();
        store.studies.insert(req.id.clone(), study);
        Ok(json!({"study_id": req.id, "tasks": n}))
    })
}

fn unknown_study(id: &str) -> ApiError {
    ApiError::not_found("UnknownStudy", format!("no study {id}"))
}

/// Blinded tasks the caller has not voted on yet.
pub async fn study_tasks(State(app): App, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    read(&app, &headers, |store, session| {
        let study = store.studies.get(&id).ok_or_else(|| unknown_study(&id))?;
        let tasks = study
            .pending_for(&session.annotator)
            .into_iter()
            .map(|item| study.blinded(item, &store.corpus))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(json!({"tasks": tasks}))
    })
}

#[derive(Deserialize)]
pub struct VoteRequest {
    item_id: String,
    choice: Choice,
}

pub async fn submit_vote(State(app): App, Path(id): Path<String>, headers: HeaderMap, uri: Uri, body: Bytes) -> Response {
    mutate(&app, &headers, &uri, &body, |store, session, req: VoteRequest| {
        let study = store.studies.get_mut(&id).ok_or_else(|| unknown_study(&id))?;
        let recorded = study.record_vote(&req.item_id, &session.annotator, req.choice)?;
        Ok(json!({"item_id": req.item_id, "recorded": recorded}))
    })
}

pub async fn study_report(State(app): App, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    read(&app, &headers, |store, _| {
        let study = store.studies.get(&id).ok_or_else(|| unknown_study(&id))?;
        let report = study.report().map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()))?;
        Ok(json!({"study_id": id, "votes": study.votes.len(), "report": report, "summary": report.to_string()}))
    })
}
