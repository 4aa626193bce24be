use std::sync::Arc;

use serde::Deserialize;

use super::dsl::{eval_condition, parse_condition};
use super::triggers::Monitor;
use crate::agent::{Tool, ToolContext, ToolError};
use crate::hub::DeviceHub;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeExecuteInput {
    source: String,
    #[serde(default)]
    register_as: Option<String>,
}

fn strip_fences(s: &str) -> &str {
    let s = s.trim();
    let s = s.strip_prefix("```").map(|rest| rest.trim_start_matches(|c: char| c.is_ascii_alphabetic())).unwrap_or(s);
    s.strip_suffix("```").unwrap_or(s).trim()
}

/// Parses and evaluates a condition once; optionally registers it.
pub struct CodeExecuteTool {
    pub hub: Arc<DeviceHub>,
    pub monitor: Arc<Monitor>,
}

impl CodeExecuteTool {
    pub fn execute(&self, source: &str, register_as: Option<&str>) -> String {
        let source = strip_fences(source);
        let ast = match parse_condition(source) {
            Ok(ast) => ast,
            Err(e) => return e.to_string(),
        };
        let value = match eval_condition(&ast, self.hub.as_ref()) {
            Ok(v) => v,
            Err(e) => return e.to_string(),
        };
        match register_as.map(str::trim).filter(|n| !n.is_empty()) {
            None => format!("result: {value}"),
            Some(name) => match self.monitor.register_parsed(name, source, ast) {
                Ok(c) => format!("result: {value}\ncondition registered as '{}'", c.name),
                Err(e) => format!("result: {value}\nerror: {e}"),
            },
        }
    }
}

impl Tool for CodeExecuteTool {
    fn call(&self, input: &str, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let trimmed = input.trim();
        if trimmed.starts_with('{') {
            return match serde_json::from_str::<CodeExecuteInput>(trimmed) {
                Ok(req) => Ok(self.execute(&req.source, req.register_as.as_deref())),
                Err(e) => Err(ToolError::failed(format!(
                    "error: invalid input ({e}); expected {{\"source\": \"<condition>\", \"register_as\": \"<optional name>\"}}"
                ))),
            };
        }
        Ok(self.execute(trimmed, None))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PollingInput {
    condition: String,
    action: String,
}

/// Registers an edge trigger that re-runs the entry agent with `action`.
pub struct ConditionPollingTool {
    pub monitor: Arc<Monitor>,
}

impl Tool for ConditionPollingTool {
    fn call(&self, input: &str, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let req: PollingInput = serde_json::from_str(input.trim()).map_err(|e| {
            ToolError::failed(format!(
                "error: invalid input ({e}); expected {{\"condition\": \"<registered condition name>\", \"action\": \"<command to run when it becomes true>\"}}"
            ))
        })?;
        let t = self
            .monitor
            .register_trigger(req.condition.trim(), &req.action, ctx.user_id)
            .map_err(|e| ToolError::failed(format!("error: {e}")))?;
        Ok(format!(
            "registered {}: when '{}' becomes true, run \"{}\"",
            t.trigger_id, t.condition_name, t.action_command
        ))
    }
}
