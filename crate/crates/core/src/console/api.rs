//! `/v1/` HTTP + event-stream routes.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tokio_stream::wrappers::IntervalStream;
use tokio_stream::StreamExt as _;

use crate::composer::Topology;
use crate::scheduler::{ConsoleOverride, OverrideAction, OverrideError};
use crate::time::{iso, Timestamp};

use super::annotation::{AnnotationDraft, AnnotationError, AnnotationPolicy, AnnotationStore};
use super::runtime::{RuntimeHandle, LEVEL_HISTORY_S};
use super::store::{ConsentRecord, JsonLog, StoreError};
use super::TokenTable;

/// Level points included per zone in `GET /v1/zones`.
pub const ZONES_LEVEL_TAIL: usize = 60;
pub const STREAM_PERIOD: Duration = Duration::from_secs(1);

pub struct Stores {
    pub overrides: Mutex<JsonLog<ConsoleOverride>>,
    pub consent: Mutex<JsonLog<ConsentRecord>>,
    pub annotations: Mutex<AnnotationStore>,
}

#[derive(Clone)]
pub struct AppState {
    pub runtime: RuntimeHandle,
    pub stores: Arc<Stores>,
    pub tokens: Arc<TokenTable>,
    pub policy: Arc<AnnotationPolicy>,
    pub topology: Arc<Topology>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<OverrideError> for ApiError {
    fn from(e: OverrideError) -> Self {
        let (status, code) = match &e {
            OverrideError::UnknownZone(_) => (StatusCode::NOT_FOUND, "unknown_zone"),
            OverrideError::NotABedroom(_) => (StatusCode::UNPROCESSABLE_ENTITY, "not_a_bedroom"),
            OverrideError::TrimOutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "trim_out_of_range"),
            OverrideError::UnknownTemplate(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_template"),
            OverrideError::MissingAuthor => (StatusCode::UNAUTHORIZED, "missing_author"),
            OverrideError::Unavailable => (StatusCode::SERVICE_UNAVAILABLE, "generator_unavailable"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match e {
            AnnotationError::UnknownZone(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn author(headers: &HeaderMap, tokens: &TokenTable) -> ApiResult<String> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing_token", "bearer token required"))?;
    tokens.author(token.trim()).map(str::to_string).ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "bad_token", "unknown token"))
}

fn check_author(claimed: Option<&str>, author: &str) -> ApiResult<()> {
    match claimed {
        Some(c) if c != author => Err(ApiError::new(StatusCode::FORBIDDEN, "author_mismatch", format!("token belongs to {author}"))),
        _ => Ok(()),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/zones", get(zones))
        .route("/v1/zones/{id}/levels", get(levels))
        .route("/v1/state", get(current_state))
        .route("/v1/zones/{id}/mute", post(mute))
        .route("/v1/zones/{id}/unmute", post(unmute))
        .route("/v1/zones/{id}/trim", post(trim))
        .route("/v1/rooms/{id}/consent", post(consent))
        .route("/v1/sequences/{zone}/trigger", post(trigger))
        .route("/v1/sequences/{zone}/stop", post(stop))
        .route("/v1/annotations", post(add_annotation).get(list_annotations))
        .route("/v1/annotations/export", get(export_annotations))
        .route("/v1/stream", get(stream))
        .with_state(state)
}

async fn zones(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    author(&headers, &s.tokens)?;
    let snap = s.runtime.current();
    let zones: Vec<_> = s
        .topology
        .zones
        .iter()
        .map(|z| {
            json!({
                "config": z,
                "status": snap.zone(&z.zone_id),
                "level_tail": snap.level_tail(&z.zone_id, ZONES_LEVEL_TAIL),
            })
        })
        .collect();
    Ok(Json(json!({ "now": snap.now.map(|t| t.to_string()), "zones": zones })))
}

#[derive(Deserialize)]
struct WindowQuery {
    /// Seconds.
    window: Option<usize>,
}

async fn levels(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, Query(q): Query<WindowQuery>) -> ApiResult<Json<serde_json::Value>> {
    author(&headers, &s.tokens)?;
    if s.topology.zone(&id).is_none() {
        return Err(OverrideError::UnknownZone(id).into());
    }
    let window = q.window.unwrap_or(ZONES_LEVEL_TAIL);
    if window == 0 || window > LEVEL_HISTORY_S {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_window", format!("window must lie in 1..={LEVEL_HISTORY_S} s")));
    }
    let snap = s.runtime.current();
    Ok(Json(json!({ "zone": id, "window_s": window, "samples": snap.level_tail(&id, window) })))
}

async fn current_state(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    author(&headers, &s.tokens)?;
    let snap = s.runtime.current();
    Ok(Json(serde_json::to_value(&*snap).expect("snapshot serializes")))
}

/// Validate, log, then hand to the generator.
async fn apply(s: &AppState, action: OverrideAction, target: &str, author: &str) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let now = s.runtime.current().now.unwrap_or_default();
    let o = ConsoleOverride::new(action, target, author, now);
    o.validate(&s.topology)?;
    s.stores.overrides.lock().await.append(&o)?;
    if let OverrideAction::ConsentSet { granted } = o.action {
        s.stores.consent.lock().await.append(&ConsentRecord { room: target.into(), granted, author: author.into(), timestamp: now })?;
    }
    s.runtime.submit(o.clone()).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "override": o }))))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AuthorBody {
    author: Option<String>,
}

/// Optional JSON body: an empty request is allowed.
fn body<T: for<'de> Deserialize<'de> + Default>(bytes: &[u8]) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_body", e.to_string()))
}

async fn mute(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, raw: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let who = author(&headers, &s.tokens)?;
    check_author(body::<AuthorBody>(&raw)?.author.as_deref(), &who)?;
    apply(&s, OverrideAction::Mute, &id, &who).await
}

async fn unmute(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, raw: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let who = author(&headers, &s.tokens)?;
    check_author(body::<AuthorBody>(&raw)?.author.as_deref(), &who)?;
    apply(&s, OverrideAction::Unmute, &id, &who).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrimBody {
    db: f64,
    author: Option<String>,
}

async fn trim(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, raw: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let who = author(&headers, &s.tokens)?;
    let b: TrimBody = serde_json::from_slice(&raw).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_body", e.to_string()))?;
    check_author(b.author.as_deref(), &who)?;
    apply(&s, OverrideAction::Trim { db: b.db }, &id, &who).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsentBody {
    granted: bool,
    author: Option<String>,
}

async fn consent(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, raw: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let who = author(&headers, &s.tokens)?;
    let b: ConsentBody = serde_json::from_slice(&raw).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_body", e.to_string()))?;
    check_author(b.author.as_deref(), &who)?;
    apply(&s, OverrideAction::ConsentSet { granted: b.granted }, &id, &who).await
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TriggerBody {
    template: Option<String>,
    author: Option<String>,
}

async fn trigger(State(s): State<AppState>, headers: HeaderMap, Path(zone): Path<String>, raw: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let who = author(&headers, &s.tokens)?;
    let b: TriggerBody = body(&raw)?;
    check_author(b.author.as_deref(), &who)?;
    apply(&s, OverrideAction::TriggerSequence { template: b.template }, &zone, &who).await
}

async fn stop(State(s): State<AppState>, headers: HeaderMap, Path(zone): Path<String>, raw: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let who = author(&headers, &s.tokens)?;
    check_author(body::<AuthorBody>(&raw)?.author.as_deref(), &who)?;
    apply(&s, OverrideAction::StopSequence, &zone, &who).await
}

async fn add_annotation(State(s): State<AppState>, headers: HeaderMap, Json(d): Json<AnnotationDraft>) -> ApiResult<impl IntoResponse> {
    let who = author(&headers, &s.tokens)?;
    s.policy.validate(&d, &s.topology)?;
    let snap = s.runtime.current();
    let sounding = snap.zone(&d.room).map(|z| z.sounding.clone()).unwrap_or_default();
    let a = s.stores.annotations.lock().await.add(d, snap.now.unwrap_or_default(), sounding, &who)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": a.id, "annotation": a }))))
}

#[derive(Deserialize, Serialize)]
struct AnnotationQuery {
    room: Option<String>,
    #[serde(default, with = "iso::option")]
    from: Option<Timestamp>,
    #[serde(default, with = "iso::option")]
    to: Option<Timestamp>,
}

async fn list_annotations(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<AnnotationQuery>) -> ApiResult<Json<serde_json::Value>> {
    author(&headers, &s.tokens)?;
    let items = s.stores.annotations.lock().await.query(q.room.as_deref(), q.from, q.to);
    Ok(Json(json!({ "annotations": items })))
}

async fn export_annotations(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    author(&headers, &s.tokens)?;
    let body = s.stores.annotations.lock().await.export();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn stream(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    author(&headers, &s.tokens)?;
    let runtime = s.runtime.clone();
    let events = IntervalStream::new(tokio::time::interval(STREAM_PERIOD)).map(move |_| {
        let snap = runtime.current();
        let zones: Vec<_> = snap
            .zones
            .iter()
            .map(|z| json!({ "zone": z.zone_id, "level_dba": z.level_dba, "voices": z.voices, "muted": z.muted }))
            .collect();
        let data = json!({ "now": snap.now.map(|t| t.to_string()), "zones": zones });
        Ok(Event::default().event("levels").data(data.to_string()))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
