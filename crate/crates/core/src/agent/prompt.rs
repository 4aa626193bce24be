use super::registry::{AgentToolConfig, ToolRegistry};

/// Fixed output-format instructions appended to every agent prompt.
pub const FORMAT_INFO: &str = "Use the following output format:
Thought: the steps you need to execute to handle the request
Action: the next tool to use, written exactly as named in the tool list
Action Input: the argument to the tool
When the request has been handled, respond instead with:
Thought: a short summary of what was done
Final Answer: the final response to the user input
Write exactly one Thought followed by either one Action with its Action Input or one Final Answer, then stop.";

/// Action name recorded for history entries produced by unparseable output.
pub const FORMAT_ERROR_ACTION: &str = "_format_error";

/// One `(s, a, o)` triple in an agent's decision history.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HistoryEntry {
    pub thought: String,
    pub action_name: String,
    pub action_input: String,
    pub observation: String,
}

impl HistoryEntry {
    pub fn format_error(raw_response: &str, reason: &str) -> Self {
        Self {
            thought: String::new(),
            action_name: FORMAT_ERROR_ACTION.into(),
            action_input: raw_response.trim().to_string(),
            observation: format!("Invalid format: {reason}. Follow the required format."),
        }
    }

    pub fn is_format_error(&self) -> bool {
        self.action_name == FORMAT_ERROR_ACTION
    }

    fn render(&self) -> String {
        if self.is_format_error() {
            format!("{}\nObservation: {}", self.action_input, self.observation)
        } else {
            format!(
                "Thought: {}\nAction: {}\nAction Input: {}\nObservation: {}",
                self.thought, self.action_name, self.action_input, self.observation
            )
        }
    }
}

pub fn tool_instructions(config: &AgentToolConfig, registry: &ToolRegistry) -> String {
    let mut out = String::from("Tools:");
    for name in &config.sub_tools {
        let Some(d) = registry.descriptor(name) else {
            continue;
        };
        out.push_str(&format!("\n- {} (input: {}): {}", d.name, d.input_hint, d.description));
    }
    out
}

pub fn history_info(history: &[HistoryEntry]) -> String {
    history
        .iter()
        .map(HistoryEntry::render)
        .collect::<Vec<_>>()
        .join("\n")
}

/// TaskInfo, ToolInstructions, FormatInfo, the input, then HistoryInfo.
pub fn build_prompt(
    config: &AgentToolConfig,
    registry: &ToolRegistry,
    input: &str,
    history: &[HistoryEntry],
) -> String {
    let mut prompt = format!(
        "{}\n\n{}\n\n{}\n\nUser input: {}",
        config.task_info.trim(),
        tool_instructions(config, registry),
        FORMAT_INFO,
        input
    );
    if !history.is_empty() {
        prompt.push_str("\n\n");
        prompt.push_str(&history_info(history));
    }
    prompt
}
