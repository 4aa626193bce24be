//! Process-wide event stream.
//!
//! Every publisher goes through one [`EventBus`]; sequence numbers are
//! assigned under the same lock that hands the envelope to the broadcast
//! channel, so subscribers observe events in `seq` order.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

pub const DEFAULT_EVENT_BUFFER: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventType {
    DeviceStateChanged,
    ToolInvoked,
    QuestionPending,
    QuestionAnswered,
    TriggerFired,
    TriggerUpdated,
    SessionStarted,
    SessionDone,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::DeviceStateChanged => "device-state-changed",
            EventType::ToolInvoked => "tool-invoked",
            EventType::QuestionPending => "question-pending",
            EventType::QuestionAnswered => "question-answered",
            EventType::TriggerFired => "trigger-fired",
            EventType::TriggerUpdated => "trigger-updated",
            EventType::SessionStarted => "session-started",
            EventType::SessionDone => "session-done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    #[serde(rename = "type")]
    pub kind: EventType,
    pub payload: Value,
    pub at: DateTime<Utc>,
}

#[derive(Clone)]
pub struct EventBus {
    inner: Arc<BusInner>,
}

struct BusInner {
    seq: Mutex<u64>,
    tx: broadcast::Sender<EventEnvelope>,
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new(DEFAULT_EVENT_BUFFER)
    }
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus")
            .field("last_seq", &*self.inner.seq.lock())
            .finish()
    }
}

impl EventBus {
    /// `capacity` is the per-subscriber buffer; a subscriber that falls
    /// further behind observes a lag gap instead of blocking publishers.
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        Self {
            inner: Arc::new(BusInner {
                seq: Mutex::new(0),
                tx,
            }),
        }
    }

    pub fn publish(&self, kind: EventType, payload: Value) -> u64 {
        let mut seq = self.inner.seq.lock();
        *seq += 1;
        let envelope = EventEnvelope {
            seq: *seq,
            kind,
            payload,
            at: Utc::now(),
        };
        // No subscribers is fine.
        let _ = self.inner.tx.send(envelope);
        *seq
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EventEnvelope> {
        self.inner.tx.subscribe()
    }

    pub fn last_seq(&self) -> u64 {
        *self.inner.seq.lock()
    }
}

/// Drains everything currently buffered for `rx` without blocking.
pub fn drain(rx: &mut broadcast::Receiver<EventEnvelope>) -> Vec<EventEnvelope> {
    let mut out = Vec::new();
    loop {
        match rx.try_recv() {
            Ok(ev) => out.push(ev),
            Err(broadcast::error::TryRecvError::Lagged(_)) => continue,
            Err(_) => return out,
        }
    }
}
