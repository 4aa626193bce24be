//! HTTP handlers.

use std::convert::Infallible;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::stream::{self, Stream};
use sage_core::api::{
    AnswerRequest, AttributeValue, CapabilityListing, ChatRequest, CommandRequest, CommandResponse, DeviceDetail, ErrorBody,
    Health, MutateRequest, PollResponse, SessionStatus, TriggerPatch,
};
use sage_core::hub::{ApiError, AttrPath};
use sage_core::monitoring::MonitorError;
use sage_core::personalization::HumanError;
use sage_core::sage::SessionOrigin;
use serde::Serialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::AppState;

/// JSON extractor whose rejections use the service error body.
pub struct Json<T>(pub T);

impl<S, T> FromRequest<S> for Json<T>
where
    axum::Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = HttpError;

    async fn from_request(req: axum::extract::Request, state: &S) -> std::result::Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Json(v)),
            Err(e) => Err(HttpError::new(e.status(), e.body_text())),
        }
    }
}

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

#[derive(Debug)]
pub struct HttpError {
    status: StatusCode,
    message: String,
}

impl HttpError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        Self::new(
            StatusCode::from_u16(e.status).unwrap_or(StatusCode::UNPROCESSABLE_ENTITY),
            e.message,
        )
    }
}

impl From<MonitorError> for HttpError {
    fn from(e: MonitorError) -> Self {
        let status = match e {
            MonitorError::UnknownTrigger(_) | MonitorError::UnknownCondition(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

type Result<T> = std::result::Result<T, HttpError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/chat", post(chat))
        .route("/sessions", get(sessions))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/trace", get(trace))
        .route("/questions", get(questions))
        .route("/human/answer", post(answer))
        .route("/events", get(events))
        .route("/devices", get(devices))
        .route("/devices/{id}", get(device))
        .route("/devices/{id}/state", get(device_state))
        .route("/devices/{id}/commands", post(command))
        .route("/devices/{id}/{component}/{capability}/{attribute}", get(attribute))
        .route("/capabilities", get(capabilities))
        .route("/capabilities/{id}", get(capability))
        .route("/sim/state", get(sim_state).post(sim_mutate))
        .route("/sim/reset", post(sim_reset))
        .route("/conditions", get(conditions))
        .route("/triggers", get(triggers))
        .route("/triggers/poll", post(poll))
        .route("/triggers/{id}", get(trigger).patch(patch_trigger).delete(delete_trigger))
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        llm: s.executor.sage().llm().backend_name().to_string(),
        last_event_seq: s.executor.sage().events().last_seq(),
    })
}

async fn chat(State(s): State<AppState>, Json(req): Json<ChatRequest>) -> Result<impl IntoResponse> {
    if req.text.trim().is_empty() {
        return Err(HttpError::new(StatusCode::BAD_REQUEST, "text must not be empty"));
    }
    if req.user_id.trim().is_empty() {
        return Err(HttpError::new(StatusCode::BAD_REQUEST, "user_id must not be empty"));
    }
    let record = s
        .executor
        .submit(req.user_id.trim(), req.text.trim(), req.session_id.clone(), SessionOrigin::User)
        .ok_or_else(|| {
            HttpError::new(
                StatusCode::CONFLICT,
                format!("session '{}' already exists", req.session_id.unwrap_or_default()),
            )
        })?;
    Ok((StatusCode::ACCEPTED, Json(record)))
}

async fn sessions(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.executor.records())
}

async fn session(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    s.executor
        .record(&id)
        .map(Json)
        .ok_or_else(|| HttpError::not_found(format!("unknown session '{id}'")))
}

async fn trace(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    match s.executor.table().trace(&id) {
        None => Err(HttpError::not_found(format!("unknown session '{id}'"))),
        Some(Some(t)) => Ok(Json(t)),
        Some(None) => {
            let finished = s.executor.record(&id).is_some_and(|r| r.status.is_finished());
            Err(if finished {
                HttpError::not_found(format!("session '{id}' has no trace"))
            } else {
                HttpError::new(StatusCode::CONFLICT, format!("session '{id}' is still running"))
            })
        }
    }
}

async fn questions(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.executor.sage().human().all_pending())
}

async fn answer(State(s): State<AppState>, Json(req): Json<AnswerRequest>) -> Result<impl IntoResponse> {
    let Some(record) = s.executor.record(&req.session_id) else {
        return Err(HttpError::not_found(format!("unknown session '{}'", req.session_id)));
    };
    if record.status != SessionStatus::AwaitingHuman {
        return Err(HttpError::new(
            StatusCode::CONFLICT,
            format!("session '{}' is not awaiting an answer", req.session_id),
        ));
    }
    match s.executor.sage().human().answer(&req.session_id, &req.text) {
        Ok(()) => Ok(Json(json!({"ok": true}))),
        Err(e @ HumanError::NotAwaiting(_)) => Err(HttpError::new(StatusCode::CONFLICT, e.to_string())),
        Err(e) => Err(HttpError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
    }
}

/// Server-sent events from subscription time. A subscriber that falls
/// behind receives a `gap` event with the number of events it missed.
async fn events(State(s): State<AppState>) -> Sse<impl Stream<Item = std::result::Result<Event, Infallible>>> {
    let rx = s.executor.sage().events().subscribe();
    let stream = stream::unfold(rx, |mut rx| async move {
        let event = match rx.recv().await {
            Ok(env) => Event::default()
                .event(env.kind.as_str())
                .id(env.seq.to_string())
                .json_data(&env)
                .unwrap_or_else(|_| Event::default().event("error")),
            Err(RecvError::Lagged(n)) => Event::default().event("gap").data(json!({"missed": n}).to_string()),
            Err(RecvError::Closed) => return None,
        };
        Some((Ok(event), rx))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn devices(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.executor.sage().hub().list_devices())
}

async fn device(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    let hub = s.executor.sage().hub();
    let device = hub
        .device(&id)
        .ok_or_else(|| HttpError::not_found(format!("unknown device '{id}'")))?;
    Ok(Json(DeviceDetail {
        device: device.clone(),
        state: hub.snapshot().for_device(&id),
    }))
}

async fn device_state(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    let hub = s.executor.sage().hub();
    if hub.device(&id).is_none() {
        return Err(HttpError::not_found(format!("unknown device '{id}'")));
    }
    Ok(Json(hub.snapshot().for_device(&id)))
}

async fn attribute(
    State(s): State<AppState>,
    Path((id, component, capability, attribute)): Path<(String, String, String, String)>,
) -> Result<impl IntoResponse> {
    let path = AttrPath::new(id, component, capability, attribute);
    let value = s.executor.sage().hub().read(&path)?;
    Ok(Json(AttributeValue { path, value }))
}

async fn command(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<CommandRequest>,
) -> Result<impl IntoResponse> {
    s.executor
        .sage()
        .hub()
        .execute_command(&id, &req.component, &req.capability, &req.command, &req.arguments)?;
    let state = s.executor.sage().hub().snapshot().for_device(&id);
    Ok(Json(CommandResponse { device_id: id, state }))
}

async fn capabilities(State(s): State<AppState>) -> impl IntoResponse {
    let hub = s.executor.sage().hub();
    let docs: Vec<CapabilityListing> = hub
        .capability_ids()
        .filter_map(|c| hub.capability_doc(c).ok())
        .map(|d| CapabilityListing {
            id: d.id.clone(),
            short_description: d.short_description.clone(),
        })
        .collect();
    Json(docs)
}

async fn capability(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(s.executor.sage().hub().capability_doc(&id)?.clone()))
}

async fn sim_state(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.executor.sage().hub().snapshot())
}

async fn sim_mutate(State(s): State<AppState>, Json(req): Json<MutateRequest>) -> Result<impl IntoResponse> {
    s.executor.sage().hub().mutate(&req.path, req.value)?;
    let value = s.executor.sage().hub().read(&req.path)?;
    Ok(Json(AttributeValue { path: req.path, value }))
}

async fn sim_reset(State(s): State<AppState>) -> Result<impl IntoResponse> {
    let sage = s.executor.sage().clone();
    tokio::task::spawn_blocking(move || sage.reset())
        .await
        .map_err(|e| HttpError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| HttpError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(json!({"ok": true})))
}

async fn conditions(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.executor.sage().monitor().conditions())
}

async fn triggers(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.executor.sage().monitor().triggers())
}

async fn trigger(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    s.executor
        .sage()
        .monitor()
        .trigger(&id)
        .map(Json)
        .ok_or_else(|| HttpError::not_found(format!("unknown trigger '{id}'")))
}

async fn patch_trigger(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<TriggerPatch>,
) -> Result<impl IntoResponse> {
    Ok(Json(s.executor.sage().monitor().set_enabled(&id, req.enabled)?))
}

async fn delete_trigger(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(s.executor.sage().monitor().delete_trigger(&id)?))
}

/// One manual poll; fired actions start as sessions.
async fn poll(State(s): State<AppState>) -> impl IntoResponse {
    let (report, sessions) = s.executor.poll_once().await;
    Json(PollResponse { report, sessions })
}
