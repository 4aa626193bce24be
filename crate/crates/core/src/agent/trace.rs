use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::parse::ParsedStep;
use crate::llm::LlmResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    /// Consecutive format-error budget exhausted.
    Formatting,
    /// Step budget exhausted.
    PlanExecution,
    /// LLM gateway failure.
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CallOutcome {
    Returned { output: String },
    Aborted { kind: AbortKind, message: String },
}

/// One invocation of an agent-tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCall {
    pub call_id: usize,
    pub parent_call: Option<usize>,
    /// Index of the parent decision event that dispatched this call.
    pub parent_event: Option<usize>,
    pub agent_name: String,
    pub depth: usize,
    pub input: String,
    /// True when this call created the agent's history (lazy initialization).
    pub history_initialized: bool,
    pub outcome: Option<CallOutcome>,
    /// History length after the call finished.
    pub history_len_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// Decision-function sample of an agent-tool.
    Decision,
    /// LLM query issued from inside a plain tool.
    ToolLlm { tool: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum StepOutcome {
    Step { step: ParsedStep },
    FormatError { reason: String },
}

/// One LLM call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub index: usize,
    pub call_id: usize,
    pub agent_name: String,
    pub depth: usize,
    #[serde(flatten)]
    pub kind: EventKind,
    pub prompt: String,
    pub llm_text: String,
    pub probability: Option<f64>,
    /// Parse result; absent for tool-internal queries.
    pub parsed: Option<StepOutcome>,
    pub observation: Option<String>,
    /// Agent history length when the prompt was built.
    pub history_len: usize,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl TraceEvent {
    pub fn step(&self) -> Option<&ParsedStep> {
        match &self.parsed {
            Some(StepOutcome::Step { step }) => Some(step),
            _ => None,
        }
    }

    pub fn is_format_error(&self) -> bool {
        matches!(self.parsed, Some(StepOutcome::FormatError { .. }))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub session_id: String,
    pub user_id: String,
    pub input: String,
    pub calls: Vec<AgentCall>,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn call(&self, call_id: usize) -> Option<&AgentCall> {
        self.calls.get(call_id)
    }

    pub fn events_of(&self, call_id: usize) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.call_id == call_id)
    }

    /// Tools dispatched by `Continue` decisions, in order, with depth.
    pub fn tool_calls(&self) -> Vec<(usize, String)> {
        self.events
            .iter()
            .filter_map(|e| match e.step() {
                Some(ParsedStep::Continue { tool, .. }) => Some((e.depth, tool.clone())),
                _ => None,
            })
            .collect()
    }

    /// Tools dispatched by decisions of calls to `agent`.
    pub fn tool_calls_of(&self, agent: &str) -> Vec<String> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Decision && e.agent_name == agent)
            .filter_map(|e| match e.step() {
                Some(ParsedStep::Continue { tool, .. }) => Some(tool.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn llm_calls(&self) -> usize {
        self.events.len()
    }

    /// Copy with all timestamps zeroed, for determinism comparisons.
    pub fn without_timestamps(&self) -> Trace {
        let mut t = self.clone();
        let epoch = DateTime::<Utc>::UNIX_EPOCH;
        for e in &mut t.events {
            e.started_at = epoch;
            e.finished_at = epoch;
        }
        t
    }
}

/// Shared, append-only trace being built by a running session.
#[derive(Debug, Clone, Default)]
pub struct TraceRecorder(Arc<Mutex<Trace>>);

impl TraceRecorder {
    pub fn new(session_id: &str, user_id: &str, input: &str) -> Self {
        Self(Arc::new(Mutex::new(Trace {
            session_id: session_id.into(),
            user_id: user_id.into(),
            input: input.into(),
            ..Trace::default()
        })))
    }

    pub fn snapshot(&self) -> Trace {
        self.0.lock().clone()
    }

    pub(crate) fn begin_call(
        &self,
        parent: Option<(usize, usize)>,
        agent_name: &str,
        depth: usize,
        input: &str,
        history_initialized: bool,
    ) -> usize {
        let mut t = self.0.lock();
        let call_id = t.calls.len();
        t.calls.push(AgentCall {
            call_id,
            parent_call: parent.map(|p| p.0),
            parent_event: parent.map(|p| p.1),
            agent_name: agent_name.into(),
            depth,
            input: input.into(),
            history_initialized,
            outcome: None,
            history_len_after: None,
        });
        call_id
    }

    pub(crate) fn finish_call(&self, call_id: usize, outcome: CallOutcome, history_len: usize) {
        let mut t = self.0.lock();
        if let Some(c) = t.calls.get_mut(call_id) {
            c.outcome = Some(outcome);
            c.history_len_after = Some(history_len);
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push_decision(
        &self,
        call_id: usize,
        agent_name: &str,
        depth: usize,
        prompt: &str,
        response: &LlmResponse,
        parsed: StepOutcome,
        history_len: usize,
        started_at: DateTime<Utc>,
    ) -> usize {
        let mut t = self.0.lock();
        let index = t.events.len();
        t.events.push(TraceEvent {
            index,
            call_id,
            agent_name: agent_name.into(),
            depth,
            kind: EventKind::Decision,
            prompt: prompt.into(),
            llm_text: response.text.clone(),
            probability: response.probability,
            parsed: Some(parsed),
            observation: None,
            history_len,
            started_at,
            finished_at: Utc::now(),
        });
        index
    }

    pub(crate) fn push_tool_llm(
        &self,
        call_id: usize,
        tool: &str,
        depth: usize,
        prompt: &str,
        response: &LlmResponse,
        started_at: DateTime<Utc>,
    ) {
        let mut t = self.0.lock();
        let index = t.events.len();
        let agent_name = t
            .calls
            .get(call_id)
            .map(|c| c.agent_name.clone())
            .unwrap_or_default();
        t.events.push(TraceEvent {
            index,
            call_id,
            agent_name,
            depth,
            kind: EventKind::ToolLlm { tool: tool.into() },
            prompt: prompt.into(),
            llm_text: response.text.clone(),
            probability: response.probability,
            parsed: None,
            observation: None,
            history_len: 0,
            started_at,
            finished_at: Utc::now(),
        });
    }

    pub(crate) fn set_observation(&self, index: usize, observation: &str) {
        if let Some(e) = self.0.lock().events.get_mut(index) {
            e.observation = Some(observation.into());
        }
    }
}
