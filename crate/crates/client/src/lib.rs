//! Thin typed client for the SAGE HTTP service.

pub mod sse;

use std::time::Duration;

use futures::stream::{self, BoxStream, StreamExt};
use reqwest::{Method, RequestBuilder, StatusCode};
use sage_core::agent::Trace;
use sage_core::api::{
    AnswerRequest, AttributeValue, CapabilityListing, ChatRequest, CommandRequest, CommandResponse, DeviceDetail,
    ErrorBody, Health, MutateRequest, PollResponse, SessionRecord, TriggerPatch,
};
use sage_core::events::EventEnvelope;
use sage_core::hub::{AttrPath, CapabilityDoc, DeviceState, DeviceSummary};
use sage_core::monitoring::{RegisteredCondition, TriggerRegistration};
use sage_core::personalization::PendingQuestion;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub use sse::{SseEvent, SseParser};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    /// Non-success status with the service's error message.
    #[error("{status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error("bad response body: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Http(e) => e.status(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Event from `/events`: a typed envelope, or a lag notice.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Event(EventEnvelope),
    Gap { missed: u64 },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn req(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{}", self.base, path))
    }

    async fn send<T: DeserializeOwned>(&self, rb: RequestBuilder) -> Result<T> {
        let resp = rb.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(ClientError::Api { status, message });
        }
        Ok(serde_json::from_slice(&bytes)?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.send(self.req(Method::GET, path)).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.req(Method::POST, path).json(body)).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn chat(&self, req: &ChatRequest) -> Result<SessionRecord> {
        self.post("/chat", req).await
    }

    pub async fn sessions(&self) -> Result<Vec<SessionRecord>> {
        self.get("/sessions").await
    }

    pub async fn session(&self, id: &str) -> Result<SessionRecord> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn trace(&self, id: &str) -> Result<Trace> {
        self.get(&format!("/sessions/{id}/trace")).await
    }

    pub async fn questions(&self) -> Result<Vec<PendingQuestion>> {
        self.get("/questions").await
    }

    pub async fn answer(&self, session_id: &str, text: &str) -> Result<()> {
        let body = AnswerRequest {
            session_id: session_id.into(),
            text: text.into(),
        };
        let _: Value = self.post("/human/answer", &body).await?;
        Ok(())
    }

    /// Polls until the session matches `done` or `timeout` passes.
    pub async fn wait_for(
        &self,
        id: &str,
        timeout: Duration,
        done: impl Fn(&SessionRecord) -> bool,
    ) -> Result<SessionRecord> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let r = self.session(id).await?;
            if done(&r) {
                return Ok(r);
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Timeout(timeout));
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn wait_finished(&self, id: &str, timeout: Duration) -> Result<SessionRecord> {
        self.wait_for(id, timeout, |r| r.status.is_finished()).await
    }

    pub async fn devices(&self) -> Result<Vec<DeviceSummary>> {
        self.get("/devices").await
    }

    pub async fn device(&self, id: &str) -> Result<DeviceDetail> {
        self.get(&format!("/devices/{id}")).await
    }

    pub async fn device_state(&self, id: &str) -> Result<DeviceState> {
        self.get(&format!("/devices/{id}/state")).await
    }

    pub async fn attribute(&self, path: &AttrPath) -> Result<Value> {
        let r: AttributeValue = self
            .get(&format!(
                "/devices/{}/{}/{}/{}",
                path.device_id, path.component, path.capability, path.attribute
            ))
            .await?;
        Ok(r.value)
    }

    pub async fn command(&self, device_id: &str, req: &CommandRequest) -> Result<CommandResponse> {
        self.post(&format!("/devices/{device_id}/commands"), req).await
    }

    pub async fn capabilities(&self) -> Result<Vec<CapabilityListing>> {
        self.get("/capabilities").await
    }

    pub async fn capability(&self, id: &str) -> Result<CapabilityDoc> {
        self.get(&format!("/capabilities/{id}")).await
    }

    pub async fn sim_state(&self) -> Result<DeviceState> {
        self.get("/sim/state").await
    }

    pub async fn mutate(&self, path: AttrPath, value: Value) -> Result<AttributeValue> {
        self.post("/sim/state", &MutateRequest { path, value }).await
    }

    pub async fn reset(&self) -> Result<()> {
        let _: Value = self.send(self.req(Method::POST, "/sim/reset")).await?;
        Ok(())
    }

    pub async fn conditions(&self) -> Result<Vec<RegisteredCondition>> {
        self.get("/conditions").await
    }

    pub async fn triggers(&self) -> Result<Vec<TriggerRegistration>> {
        self.get("/triggers").await
    }

    pub async fn trigger(&self, id: &str) -> Result<TriggerRegistration> {
        self.get(&format!("/triggers/{id}")).await
    }

    pub async fn set_trigger_enabled(&self, id: &str, enabled: bool) -> Result<TriggerRegistration> {
        self.send(self.req(Method::PATCH, &format!("/triggers/{id}")).json(&TriggerPatch { enabled }))
            .await
    }

    pub async fn delete_trigger(&self, id: &str) -> Result<TriggerRegistration> {
        self.send(self.req(Method::DELETE, &format!("/triggers/{id}"))).await
    }

    pub async fn poll(&self) -> Result<PollResponse> {
        self.send(self.req(Method::POST, "/triggers/poll")).await
    }

    /// Raw server-sent events.
    pub async fn raw_events(&self) -> Result<BoxStream<'static, Result<SseEvent>>> {
        let resp = self.req(Method::GET, "/events").send().await?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Api {
                status,
                message: resp.text().await.unwrap_or_default(),
            });
        }
        let bytes = resp.bytes_stream();
        let s = stream::unfold(
            (bytes, SseParser::new(), std::collections::VecDeque::new()),
            |(mut bytes, mut parser, mut queue)| async move {
                loop {
                    if let Some(ev) = queue.pop_front() {
                        return Some((Ok(ev), (bytes, parser, queue)));
                    }
                    match bytes.next().await {
                        Some(Ok(chunk)) => queue.extend(parser.feed(&chunk)),
                        Some(Err(e)) => return Some((Err(ClientError::Http(e)), (bytes, parser, queue))),
                        None => return None,
                    }
                }
            },
        );
        Ok(s.boxed())
    }

    /// Typed event stream; lag notices come through as [`StreamItem::Gap`].
    pub async fn events(&self) -> Result<BoxStream<'static, Result<StreamItem>>> {
        let raw = self.raw_events().await?;
        Ok(raw
            .map(|r| {
                let ev = r?;
                if ev.event == "gap" {
                    let v: Value = ev.json()?;
                    return Ok(StreamItem::Gap {
                        missed: v["missed"].as_u64().unwrap_or(0),
                    });
                }
                Ok(StreamItem::Event(ev.json()?))
            })
            .boxed())
    }
}
