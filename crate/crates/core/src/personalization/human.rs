use std::collections::{HashMap, VecDeque};
use std::sync::mpsc::{sync_channel, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::events::{EventBus, EventType};

pub const DEFAULT_HUMAN_TIMEOUT: Duration = Duration::from_secs(120);
pub const HUMAN_DISABLED_OBSERVATION: &str =
    "human interaction is disabled; proceed with available information";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub session_id: String,
    pub question: String,
    pub asked_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HumanError {
    #[error("session '{0}' already has a pending question")]
    AlreadyPending(String),
    #[error("session '{0}' is not awaiting an answer")]
    NotAwaiting(String),
    #[error("no answer within {0} seconds")]
    Timeout(u64),
    #[error("question for session '{0}' was cancelled")]
    Cancelled(String),
}

struct Slot {
    question: PendingQuestion,
    reply: SyncSender<String>,
}

/// Registry of questions blocked on a human reply, one per session.
#[derive(Default)]
pub struct HumanChannel {
    pending: Mutex<HashMap<String, Slot>>,
    events: Option<EventBus>,
}

impl std::fmt::Debug for HumanChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HumanChannel")
            .field("pending", &self.pending.lock().len())
            .finish()
    }
}

impl HumanChannel {
    pub fn new(events: Option<EventBus>) -> Self {
        Self {
            pending: Mutex::new(HashMap::new()),
            events,
        }
    }

    /// Blocks the calling thread until answered or `timeout` elapses.
    pub fn ask(&self, session_id: &str, question: &str, timeout: Duration) -> Result<String, HumanError> {
        let (tx, rx) = sync_channel(1);
        {
            let mut pending = self.pending.lock();
            if pending.contains_key(session_id) {
                return Err(HumanError::AlreadyPending(session_id.into()));
            }
            pending.insert(
                session_id.into(),
                Slot {
                    question: PendingQuestion {
                        session_id: session_id.into(),
                        question: question.into(),
                        asked_at: Utc::now(),
                    },
                    reply: tx,
                },
            );
        }
        if let Some(bus) = &self.events {
            bus.publish(
                EventType::QuestionPending,
                json!({"session_id": session_id, "question": question}),
            );
        }
        match rx.recv_timeout(timeout) {
            Ok(answer) => Ok(answer),
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().remove(session_id);
                Err(HumanError::Timeout(timeout.as_secs()))
            }
            Err(RecvTimeoutError::Disconnected) => Err(HumanError::Cancelled(session_id.into())),
        }
    }

    pub fn answer(&self, session_id: &str, text: &str) -> Result<(), HumanError> {
        let slot = self
            .pending
            .lock()
            .remove(session_id)
            .ok_or_else(|| HumanError::NotAwaiting(session_id.into()))?;
        // The asker may have timed out between removal and send; that is fine.
        let _ = slot.reply.send(text.to_string());
        if let Some(bus) = &self.events {
            bus.publish(
                EventType::QuestionAnswered,
                json!({"session_id": session_id, "answer": text}),
            );
        }
        Ok(())
    }

    /// Drops a pending question; the blocked asker sees `Cancelled`.
    pub fn cancel(&self, session_id: &str) -> bool {
        self.pending.lock().remove(session_id).is_some()
    }

    pub fn pending(&self, session_id: &str) -> Option<PendingQuestion> {
        self.pending.lock().get(session_id).map(|s| s.question.clone())
    }

    pub fn all_pending(&self) -> Vec<PendingQuestion> {
        let mut out: Vec<_> = self.pending.lock().values().map(|s| s.question.clone()).collect();
        out.sort_by(|a, b| a.asked_at.cmp(&b.asked_at));
        out
    }
}

/// Queue of canned answers for harness runs.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAnswers(Arc<Mutex<VecDeque<String>>>);

impl ScriptedAnswers {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(Arc::new(Mutex::new(answers.into_iter().map(Into::into).collect())))
    }

    pub fn next(&self) -> Option<String> {
        self.0.lock().pop_front()
    }

    pub fn remaining(&self) -> usize {
        self.0.lock().len()
    }
}

/// How the human-interaction tool behaves in a session.
#[derive(Debug, Clone, Default)]
pub enum HumanMode {
    #[default]
    Disabled,
    Interactive {
        channel: Arc<HumanChannel>,
        timeout: Duration,
    },
    Scripted(ScriptedAnswers),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::drain;

    #[test]
    fn ask_blocks_until_answered() {
        let bus = EventBus::new(16);
        let mut rx = bus.subscribe();
        let channel = Arc::new(HumanChannel::new(Some(bus)));
        let asker = {
            let channel = channel.clone();
            std::thread::spawn(move || channel.ask("s1", "What is your favorite sports team?", Duration::from_secs(5)))
        };
        while channel.pending("s1").is_none() {
            std::thread::sleep(Duration::from_millis(1));
        }
        assert_eq!(
            channel.ask("s1", "again?", Duration::from_millis(1)),
            Err(HumanError::AlreadyPending("s1".into()))
        );
        channel.answer("s1", "the Raptors").unwrap();
        assert_eq!(asker.join().unwrap().unwrap(), "the Raptors");
        assert!(channel.pending("s1").is_none());
        let kinds: Vec<_> = drain(&mut rx).into_iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventType::QuestionPending, EventType::QuestionAnswered]);
    }

    #[test]
    fn timeout_clears_the_question() {
        let channel = HumanChannel::new(None);
        assert_eq!(
            channel.ask("s", "q", Duration::from_millis(10)),
            Err(HumanError::Timeout(0))
        );
        assert!(channel.pending("s").is_none());
        assert_eq!(channel.answer("s", "late"), Err(HumanError::NotAwaiting("s".into())));
    }

    #[test]
    fn scripted_answers_drain_in_order() {
        let s = ScriptedAnswers::new(["a", "b"]);
        assert_eq!(s.next().as_deref(), Some("a"));
        assert_eq!(s.next().as_deref(), Some("b"));
        assert_eq!(s.next(), None);
    }
}
