use std::collections::HashMap;

use chrono::Utc;
use serde_json::json;
use thiserror::Error;

use super::parse::{parse_llm_output, FormatError, ParsedStep};
use super::prompt::{build_prompt, HistoryEntry};
use super::registry::{AgentToolConfig, ToolContext, ToolError, ToolRegistry};
use super::trace::{AbortKind, CallOutcome, StepOutcome, Trace, TraceRecorder};
use crate::events::{EventBus, EventType};
use crate::llm::{LlmError, LlmGateway, LlmResponse};
use crate::personalization::HumanMode;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DecideError {
    #[error("{attempts} consecutive responses violated the output format; last: {reason}")]
    Formatting { attempts: u32, reason: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Abort of an agent-tool call.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("agent-tool '{agent}' aborted: {message}")]
pub struct AgentAbort {
    pub agent: String,
    pub kind: AbortKind,
    pub message: String,
}

fn check_tool(config: &AgentToolConfig, step: ParsedStep) -> Result<ParsedStep, FormatError> {
    match step {
        ParsedStep::Continue { tool, input, thought } => {
            let canonical = config
                .sub_tools
                .iter()
                .find(|t| **t == tool)
                .or_else(|| config.sub_tools.iter().find(|t| t.eq_ignore_ascii_case(&tool)));
            match canonical {
                Some(name) => Ok(ParsedStep::Continue {
                    tool: name.clone(),
                    input,
                    thought,
                }),
                None => Err(FormatError::new(format!(
                    "unknown tool '{tool}'; the available tools are: {}",
                    config.sub_tools.join(", ")
                ))),
            }
        }
        t => Ok(t),
    }
}

/// Samples the decision function once per attempt, retrying on format errors.
///
/// `observe` sees every LLM call with the history length at prompt time and
/// returns an event id; the id of the accepted call is returned alongside.
pub fn decide_observed(
    config: &AgentToolConfig,
    registry: &ToolRegistry,
    input: &str,
    history: &mut Vec<HistoryEntry>,
    llm: &LlmGateway,
    observe: &mut dyn FnMut(&str, &LlmResponse, StepOutcome, usize) -> usize,
) -> Result<(ParsedStep, usize), DecideError> {
    let mut failures = 0;
    loop {
        let prompt = build_prompt(config, registry, input, history);
        let response = llm.complete(&prompt)?;
        let parsed = parse_llm_output(&response.text).and_then(|s| check_tool(config, s));
        let outcome = match &parsed {
            Ok(step) => StepOutcome::Step { step: step.clone() },
            Err(e) => StepOutcome::FormatError {
                reason: e.reason.clone(),
            },
        };
        let event = observe(&prompt, &response, outcome, history.len());
        match parsed {
            Ok(step) => return Ok((step, event)),
            Err(e) => {
                failures += 1;
                history.push(HistoryEntry::format_error(&response.text, &e.reason));
                if failures >= config.max_format_retries {
                    return Err(DecideError::Formatting {
                        attempts: failures,
                        reason: e.reason,
                    });
                }
            }
        }
    }
}

pub fn decide(
    config: &AgentToolConfig,
    registry: &ToolRegistry,
    input: &str,
    history: &mut Vec<HistoryEntry>,
    llm: &LlmGateway,
) -> Result<ParsedStep, DecideError> {
    decide_observed(config, registry, input, history, llm, &mut |_, _, _, _| 0).map(|(s, _)| s)
}

#[derive(Debug, Clone)]
pub struct SessionSettings {
    pub session_id: String,
    pub user_id: String,
    pub human: HumanMode,
}

/// Depth assigned to the entry agent.
pub const ENTRY_DEPTH: usize = 1;

/// Session-local agent state: per-agent histories and the trace.
pub struct AgentSession<'a> {
    registry: &'a ToolRegistry,
    llm: &'a LlmGateway,
    events: Option<&'a EventBus>,
    settings: SessionSettings,
    histories: HashMap<String, Vec<HistoryEntry>>,
    recorder: TraceRecorder,
}

impl<'a> AgentSession<'a> {
    pub fn new(
        registry: &'a ToolRegistry,
        llm: &'a LlmGateway,
        settings: SessionSettings,
        input: &str,
    ) -> Self {
        let recorder = TraceRecorder::new(&settings.session_id, &settings.user_id, input);
        Self {
            registry,
            llm,
            events: None,
            settings,
            histories: HashMap::new(),
            recorder,
        }
    }

    pub fn with_events(mut self, bus: &'a EventBus) -> Self {
        self.events = Some(bus);
        self
    }

    pub fn recorder(&self) -> &TraceRecorder {
        &self.recorder
    }

    pub fn trace(&self) -> Trace {
        self.recorder.snapshot()
    }

    /// History of `agent`, if it has been initialized in this session.
    pub fn history(&self, agent: &str) -> Option<&[HistoryEntry]> {
        self.histories.get(agent).map(Vec::as_slice)
    }

    /// Runs the entry agent on `input`.
    pub fn run(&mut self, input: &str) -> Result<String, AgentAbort> {
        let entry = self.registry.entry().to_string();
        self.call_agent_tool(&entry, input)
    }

    pub fn call_agent_tool(&mut self, name: &str, input: &str) -> Result<String, AgentAbort> {
        self.call_agent(name, input, ENTRY_DEPTH, None)
    }

    fn call_agent(
        &mut self,
        name: &str,
        input: &str,
        depth: usize,
        parent: Option<(usize, usize)>,
    ) -> Result<String, AgentAbort> {
        let registry = self.registry;
        let Some(config) = registry.agent(name) else {
            return Err(AgentAbort {
                agent: name.into(),
                kind: AbortKind::PlanExecution,
                message: format!("'{name}' is not an agent-tool"),
            });
        };
        let initialized = !self.histories.contains_key(name);
        let mut history = self.histories.remove(name).unwrap_or_default();
        let call_id = self.recorder.begin_call(parent, name, depth, input, initialized);

        let result = self.run_loop(config, input, depth, call_id, &mut history);
        // Both τ and aborts leave the agent with an empty history.
        history.clear();
        let outcome = match &result {
            Ok(output) => CallOutcome::Returned {
                output: output.clone(),
            },
            Err(a) => CallOutcome::Aborted {
                kind: a.kind,
                message: a.message.clone(),
            },
        };
        self.recorder.finish_call(call_id, outcome, history.len());
        self.histories.insert(name.to_string(), history);
        result
    }

    fn run_loop(
        &mut self,
        config: &AgentToolConfig,
        input: &str,
        depth: usize,
        call_id: usize,
        history: &mut Vec<HistoryEntry>,
    ) -> Result<String, AgentAbort> {
        let abort = |kind, message: String| AgentAbort {
            agent: config.name.clone(),
            kind,
            message,
        };
        let mut steps = 0;
        loop {
            let recorder = &self.recorder;
            let mut observe = |prompt: &str, resp: &LlmResponse, parsed, len| {
                recorder.push_decision(call_id, &config.name, depth, prompt, resp, parsed, len, Utc::now())
            };
            let (step, event) =
                match decide_observed(config, self.registry, input, history, self.llm, &mut observe) {
                    Ok(v) => v,
                    Err(DecideError::Formatting { attempts, reason }) => {
                        return Err(abort(
                            AbortKind::Formatting,
                            format!("{attempts} consecutive format errors; last: {reason}"),
                        ))
                    }
                    Err(DecideError::Llm(e)) => return Err(abort(AbortKind::Gateway, e.to_string())),
                };
            let (tool, arg, thought) = match step {
                ParsedStep::Terminate { output, .. } => return Ok(output),
                ParsedStep::Continue { tool, input, thought } => (tool, input, thought),
            };
            if steps >= config.max_steps {
                return Err(abort(
                    AbortKind::PlanExecution,
                    format!("step budget of {} exhausted", config.max_steps),
                ));
            }
            if let Some(bus) = self.events {
                bus.publish(
                    EventType::ToolInvoked,
                    json!({
                        "session_id": self.settings.session_id,
                        "agent": config.name,
                        "tool": tool,
                        "input": arg,
                        "depth": depth,
                    }),
                );
            }
            let observation = self.dispatch(&tool, &arg, depth, call_id, event)?;
            self.recorder.set_observation(event, &observation);
            history.push(HistoryEntry {
                thought,
                action_name: tool,
                action_input: arg,
                observation,
            });
            steps += 1;
        }
    }

    fn dispatch(
        &mut self,
        tool: &str,
        arg: &str,
        depth: usize,
        call_id: usize,
        event: usize,
    ) -> Result<String, AgentAbort> {
        if self.registry.is_agent(tool) {
            return match self.call_agent(tool, arg, depth + 1, Some((call_id, event))) {
                Ok(output) => Ok(output),
                Err(a) if a.kind == AbortKind::Gateway => Err(a),
                Err(a) => Ok(format!("error: {a}")),
            };
        }
        let Some(implementation) = self.registry.implementation(tool) else {
            return Ok(format!("error: tool '{tool}' has no implementation"));
        };
        let ctx = ToolContext {
            session_id: &self.settings.session_id,
            user_id: &self.settings.user_id,
            tool_name: tool,
            depth,
            human: &self.settings.human,
            llm: self.llm,
            recorder: &self.recorder,
            call_id,
        };
        match implementation.call(arg, &ctx) {
            Ok(out) => Ok(out),
            Err(ToolError::Failed(msg)) => Ok(msg),
            Err(ToolError::Llm(e)) => Err(AgentAbort {
                agent: tool.into(),
                kind: AbortKind::Gateway,
                message: e.to_string(),
            }),
        }
    }
}
