//! Session records and the bounded session executor.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use parking_lot::Mutex;
use sage_core::agent::Trace;
use sage_core::api::{SessionRecord, SessionStatus};
use sage_core::sage::{Sage, SessionError, SessionOrigin, SessionRequest};
use tokio::sync::Semaphore;
use tracing::{info, warn};

struct Entry {
    record: SessionRecord,
    trace: Option<Trace>,
}

#[derive(Default)]
pub struct SessionTable {
    entries: Mutex<HashMap<String, Entry>>,
    order: Mutex<Vec<String>>,
}

impl SessionTable {
    fn insert(&self, record: SessionRecord) -> bool {
        let mut entries = self.entries.lock();
        if entries.contains_key(&record.session_id) {
            return false;
        }
        self.order.lock().push(record.session_id.clone());
        entries.insert(record.session_id.clone(), Entry { record, trace: None });
        true
    }

    fn finish(&self, session_id: &str, result: Result<(String, Trace), (String, Option<Trace>)>) {
        let mut entries = self.entries.lock();
        let Some(e) = entries.get_mut(session_id) else {
            return;
        };
        let (status, trace) = match result {
            Ok((answer, trace)) => {
                e.record.answer = Some(answer);
                (SessionStatus::Done, Some(trace))
            }
            Err((error, trace)) => {
                e.record.error = Some(error);
                (SessionStatus::Error, trace)
            }
        };
        debug_assert!(e.record.status.can_become(status));
        e.record.status = status;
        e.record.finished_at = Some(Utc::now());
        e.trace = trace;
    }

    pub fn raw(&self, session_id: &str) -> Option<SessionRecord> {
        self.entries.lock().get(session_id).map(|e| e.record.clone())
    }

    pub fn trace(&self, session_id: &str) -> Option<Option<Trace>> {
        self.entries.lock().get(session_id).map(|e| e.trace.clone())
    }

    pub fn ids(&self) -> Vec<String> {
        self.order.lock().clone()
    }
}

/// Runs agent sessions on blocking threads, at most `max_sessions` at once.
#[derive(Clone)]
pub struct Executor {
    sage: Arc<Sage>,
    table: Arc<SessionTable>,
    permits: Arc<Semaphore>,
    human_timeout: Duration,
}

impl Executor {
    pub fn new(sage: Arc<Sage>, max_sessions: usize, human_timeout: Duration) -> Self {
        Self {
            sage,
            table: Arc::new(SessionTable::default()),
            permits: Arc::new(Semaphore::new(max_sessions.max(1))),
            human_timeout,
        }
    }

    pub fn sage(&self) -> &Arc<Sage> {
        &self.sage
    }

    pub fn table(&self) -> &SessionTable {
        &self.table
    }

    /// Current record; a running session with an open question reports
    /// `awaiting_human`.
    pub fn record(&self, session_id: &str) -> Option<SessionRecord> {
        let mut r = self.table.raw(session_id)?;
        if r.status == SessionStatus::Running {
            if let Some(q) = self.sage.human().pending(session_id) {
                r.status = SessionStatus::AwaitingHuman;
                r.question = Some(q.question);
            }
        }
        Some(r)
    }

    pub fn records(&self) -> Vec<SessionRecord> {
        self.table.ids().iter().filter_map(|id| self.record(id)).collect()
    }

    /// Registers the session and starts it. `None` when the id is taken.
    pub fn submit(&self, user_id: &str, input: &str, session_id: Option<String>, origin: SessionOrigin) -> Option<SessionRecord> {
        let session_id = session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let record = SessionRecord {
            session_id: session_id.clone(),
            user_id: user_id.to_string(),
            input: input.to_string(),
            status: SessionStatus::Running,
            origin: origin.clone(),
            answer: None,
            error: None,
            question: None,
            trace_ref: format!("/sessions/{session_id}/trace"),
            created_at: Utc::now(),
            finished_at: None,
        };
        if !self.table.insert(record.clone()) {
            return None;
        }
        let req = SessionRequest {
            session_id: Some(session_id.clone()),
            user_id: user_id.to_string(),
            input: input.to_string(),
            human: self.sage.interactive(self.human_timeout),
            origin,
        };
        let this = self.clone();
        tokio::spawn(async move {
            let Ok(_permit) = this.permits.clone().acquire_owned().await else {
                return;
            };
            let sage = this.sage.clone();
            let outcome = tokio::task::spawn_blocking(move || sage.run_session(req)).await;
            let result = match outcome {
                Ok(Ok(r)) => Ok((r.answer, r.trace)),
                Ok(Err(e)) => {
                    let trace = match &e {
                        SessionError::Aborted { trace, .. } => Some((**trace).clone()),
                        SessionError::EmptyInput => None,
                    };
                    Err((e.to_string(), trace))
                }
                Err(join) => {
                    warn!(session = %session_id, error = %join, "session task failed");
                    Err((format!("session task failed: {join}"), None))
                }
            };
            info!(session = %session_id, ok = result.is_ok(), "session finished");
            this.table.finish(&session_id, result);
        });
        Some(record)
    }

    /// Evaluates triggers once and submits a session for each fire.
    pub async fn poll_once(&self) -> (sage_core::monitoring::TickReport, Vec<SessionRecord>) {
        let sage = self.sage.clone();
        let report = match tokio::task::spawn_blocking(move || sage.tick()).await {
            Ok(r) => r,
            Err(e) => {
                warn!(error = %e, "poll tick failed");
                return (Default::default(), vec![]);
            }
        };
        let spawned = report
            .fired
            .iter()
            .filter_map(|f| {
                self.submit(
                    &f.user_id,
                    &f.action_command,
                    None,
                    SessionOrigin::Trigger {
                        trigger_id: f.trigger_id.clone(),
                    },
                )
            })
            .collect();
        (report, spawned)
    }
}
