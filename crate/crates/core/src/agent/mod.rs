//! Hierarchical agent-tool decision loop.

mod parse;
mod prompt;
mod registry;
mod runtime;
mod trace;

pub use parse::{parse_llm_output, render_step, FormatError, ParsedStep};
pub use prompt::{build_prompt, history_info, tool_instructions, HistoryEntry, FORMAT_ERROR_ACTION, FORMAT_INFO};
pub use registry::{
    tool_fn, AgentToolConfig, RegistryConfig, RegistryError, Tool, ToolContext, ToolDescriptor,
    ToolError, ToolKind, ToolRegistry, DEFAULT_MAX_FORMAT_RETRIES, DEFAULT_MAX_STEPS,
};
pub use runtime::{decide, decide_observed, AgentAbort, AgentSession, DecideError, SessionSettings, ENTRY_DEPTH};
pub use trace::{AbortKind, AgentCall, CallOutcome, EventKind, StepOutcome, Trace, TraceEvent, TraceRecorder};
