//! Single-prompt and fixed-pipeline baselines.

use std::collections::BTreeMap;

use sage_core::hub::{AttrPath, DeviceHub};
use sage_core::llm::{estimate_tokens, LlmError, LlmGateway, DEFAULT_CONTEXT_LIMIT_TOKENS};
use sage_core::personalization::fill_template;
use sage_core::tools::render_device_summaries;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::case::TaskCase;

pub const ONE_PROMPT_TEMPLATE: &str = "You control a smart home by editing its device state directly.

Current state of the relevant devices (attribute path: value):
{state}

Command: {command}

Reply with only a JSON array of the changes to make, each of the form {\"path\": \"<attribute path>\", \"new_value\": <value>}.
Changes:";

pub const SASHA_FILTER_TEMPLATE: &str = "You select the smart home devices relevant to a command.

Devices:
{devices}

Command: {command}

Reply with only a JSON array of the relevant device ids.
Relevant devices:";

pub const SASHA_PLAN_TEMPLATE: &str = "You plan smart home device commands.

Devices:
{devices}

Capability documentation:
{docs}

Command: {command}

Reply with only a JSON object {\"commands\": [{\"device_id\", \"component\", \"capability\", \"command\", \"arguments\": [...]}], \"response\": \"<message to the user>\"}.
Plan:";

#[derive(Debug, Error)]
pub enum BaselineError {
    /// The case cannot be run as configured.
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    /// The model's output could not be used; the run fails.
    #[error("{0}")]
    Output(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub answer: String,
    pub llm_calls: usize,
    pub applied: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Change {
    path: AttrPath,
    new_value: Value,
}

/// JSON value embedded in model output, ignoring surrounding prose and
/// code fences.
fn extract_json(text: &str) -> Result<Value, String> {
    let start = text.find(['[', '{']).ok_or("no JSON found in the output")?;
    let end = text.rfind([']', '}']).filter(|e| *e >= start).ok_or("unterminated JSON")?;
    serde_json::from_str(&text[start..=end]).map_err(|e| format!("invalid JSON: {e}"))
}

/// Serialized view of the selected paths, checked against the token budget.
pub fn selected_state(hub: &DeviceHub, case: &TaskCase) -> Result<String, BaselineError> {
    selected_state_within(hub, case, DEFAULT_CONTEXT_LIMIT_TOKENS)
}

pub fn selected_state_within(hub: &DeviceHub, case: &TaskCase, budget: usize) -> Result<String, BaselineError> {
    if case.selected_state_paths.is_empty() {
        return Err(BaselineError::Setup(format!("case '{}' has no selected_state_paths", case.id)));
    }
    let mut map = BTreeMap::new();
    for p in &case.selected_state_paths {
        let v = hub
            .read(p)
            .map_err(|e| BaselineError::Setup(format!("selected path {p}: {}", e.message)))?;
        map.insert(p.to_string(), v);
    }
    let text = map
        .iter()
        .map(|(p, v)| format!("{p}: {v}"))
        .collect::<Vec<_>>()
        .join("\n");
    let tokens = estimate_tokens(&text);
    if tokens > budget {
        return Err(BaselineError::Setup(format!(
            "selected state for '{}' needs about {tokens} tokens, over the {budget}-token budget; narrow selected_state_paths",
            case.id
        )));
    }
    Ok(text)
}

/// One LLM call producing a list of state changes, applied directly.
pub fn one_prompt(hub: &DeviceHub, llm: &LlmGateway, case: &TaskCase) -> Result<BaselineRun, BaselineError> {
    let state = selected_state(hub, case)?;
    let prompt = fill_template(ONE_PROMPT_TEMPLATE, &[("state", &state), ("command", &case.input_command)]);
    let text = llm.complete(&prompt)?.text;
    let changes: Vec<Change> = serde_json::from_value(extract_json(&text).map_err(BaselineError::Output)?)
        .map_err(|e| BaselineError::Output(format!("change list: {e}")))?;
    let mut applied = Vec::new();
    for c in changes {
        hub.mutate(&c.path, c.new_value.clone())
            .map_err(|e| BaselineError::Output(e.message))?;
        applied.push(format!("{} = {}", c.path, c.new_value));
    }
    Ok(BaselineRun {
        answer: String::new(),
        llm_calls: 1,
        applied,
    })
}

#[derive(Debug, Deserialize)]
struct PlannedCommand {
    device_id: String,
    #[serde(default = "main_component")]
    component: String,
    capability: String,
    command: String,
    #[serde(default)]
    arguments: Vec<Value>,
}

fn main_component() -> String {
    "main".into()
}

#[derive(Debug, Deserialize)]
struct SashaPlan {
    commands: Vec<PlannedCommand>,
    #[serde(default)]
    response: String,
}

/// Filtering, then planning, then execution through the hub.
pub fn sasha(hub: &DeviceHub, llm: &LlmGateway, case: &TaskCase) -> Result<BaselineRun, BaselineError> {
    let summaries = hub.list_devices();
    let prompt = fill_template(
        SASHA_FILTER_TEMPLATE,
        &[("devices", &render_device_summaries(&summaries)), ("command", &case.input_command)],
    );
    let text = llm.complete(&prompt)?.text;
    let ids: Vec<String> = serde_json::from_value(extract_json(&text).map_err(BaselineError::Output)?)
        .map_err(|e| BaselineError::Output(format!("device list: {e}")))?;
    let selected: Vec<_> = summaries.into_iter().filter(|d| ids.contains(&d.device_id)).collect();
    if selected.is_empty() {
        return Err(BaselineError::Output("filtering selected no known device".into()));
    }

    let mut caps: Vec<&str> = selected
        .iter()
        .flat_map(|d| d.components.iter().flat_map(|c| c.capabilities.iter().map(|c| c.id.as_str())))
        .collect();
    caps.sort_unstable();
    caps.dedup();
    let docs = caps
        .iter()
        .filter_map(|c| hub.capability_doc(c).ok().map(|d| d.to_json()))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = fill_template(
        SASHA_PLAN_TEMPLATE,
        &[
            ("devices", &render_device_summaries(&selected)),
            ("docs", &docs),
            ("command", &case.input_command),
        ],
    );
    let text = llm.complete(&prompt)?.text;
    let plan: SashaPlan = serde_json::from_value(extract_json(&text).map_err(BaselineError::Output)?)
        .map_err(|e| BaselineError::Output(format!("plan: {e}")))?;

    let mut applied = Vec::new();
    for c in plan.commands {
        hub.execute_command(&c.device_id, &c.component, &c.capability, &c.command, &c.arguments)
            .map_err(|e| BaselineError::Output(e.message))?;
        applied.push(format!("{}/{}/{} {}", c.device_id, c.component, c.capability, c.command));
    }
    Ok(BaselineRun {
        answer: plan.response,
        llm_calls: 2,
        applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_found_inside_prose() {
        assert_eq!(
            extract_json("Sure:\n```json\n[{\"a\": 1}]\n```").unwrap(),
            serde_json::json!([{"a": 1}])
        );
        assert!(extract_json("no changes").is_err());
    }

    fn hub() -> DeviceHub {
        DeviceHub::load_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/home")).unwrap()
    }

    fn case(paths: &[&str]) -> TaskCase {
        serde_json::from_value(serde_json::json!({
            "id": "c", "categories": ["DirectCommand"], "input_command": "x",
            "validation": {"answer_contains": {"expected_info": "y"}},
            "selected_state_paths": paths
        }))
        .unwrap()
    }

    #[test]
    fn selected_state_lists_each_path() {
        let text = selected_state(&hub(), &case(&["light-2/main/switch/switch", "tv-1/main/tvChannel/tvChannel"])).unwrap();
        assert_eq!(text, "light-2/main/switch/switch: \"off\"\ntv-1/main/tvChannel/tvChannel: \"3\"");
    }

    #[test]
    fn over_budget_state_is_a_setup_error() {
        let all: Vec<String> = hub().declared_paths().iter().map(|p| p.to_string()).collect();
        let refs: Vec<&str> = all.iter().map(String::as_str).collect();
        let err = selected_state_within(&hub(), &case(&refs), 20).unwrap_err();
        assert!(matches!(err, BaselineError::Setup(ref m) if m.contains("narrow selected_state_paths")), "{err}");
        assert!(matches!(selected_state(&hub(), &case(&[])), Err(BaselineError::Setup(_))));
    }
}
