use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::TraceRecorder;
use crate::fixtures::{read_json, FixtureError};
use crate::llm::{Completer, LlmError, LlmGateway, LlmResponse};
use crate::personalization::HumanMode;

pub const DEFAULT_MAX_STEPS: u32 = 15;
pub const DEFAULT_MAX_FORMAT_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolKind {
    #[default]
    Plain,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub input_hint: String,
    #[serde(default)]
    pub kind: ToolKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentToolConfig {
    pub name: String,
    pub task_info: String,
    pub sub_tools: Vec<String>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_max_format_retries")]
    pub max_format_retries: u32,
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

fn default_max_format_retries() -> u32 {
    DEFAULT_MAX_FORMAT_RETRIES
}

fn default_entry() -> String {
    "SAGE".into()
}

/// On-disk tool hierarchy (`tools.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    #[serde(default = "default_entry")]
    pub entry: String,
    pub tools: Vec<ToolDescriptor>,
    pub agents: Vec<AgentToolConfig>,
    /// Prompt templates for plain tools that query the LLM, keyed by tool
    /// name.
    #[serde(default)]
    pub prompts: BTreeMap<String, String>,
}

impl RegistryConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        read_json(path)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("duplicate tool name '{0}'")]
    DuplicateTool(String),
    #[error("agent-tool '{0}' has no agent configuration")]
    MissingAgentConfig(String),
    #[error("agent configuration '{0}' does not correspond to an agent-kind tool")]
    OrphanAgentConfig(String),
    #[error("agent '{agent}' lists unknown sub-tool '{tool}'")]
    UnknownSubTool { agent: String, tool: String },
    #[error("agent '{0}' has no sub-tools")]
    EmptySubTools(String),
    #[error("agent '{0}' must allow at least one step and one format retry")]
    ZeroBudget(String),
    #[error("entry agent '{0}' is not defined as an agent-tool")]
    MissingEntry(String),
    #[error("agent hierarchy contains a cycle through '{0}'")]
    Cycle(String),
    #[error("plain tool '{0}' has no implementation")]
    MissingImplementation(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ToolError {
    /// Becomes the observation; the agent is expected to recover.
    #[error("{0}")]
    Failed(String),
    /// Infrastructure failure that aborts the session.
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl ToolError {
    pub fn failed(msg: impl Into<String>) -> Self {
        Self::Failed(msg.into())
    }
}

/// What a plain tool sees of the session invoking it.
pub struct ToolContext<'a> {
    pub session_id: &'a str,
    pub user_id: &'a str,
    pub tool_name: &'a str,
    /// Depth of the invoking agent.
    pub depth: usize,
    pub human: &'a HumanMode,
    pub(crate) llm: &'a LlmGateway,
    pub(crate) recorder: &'a TraceRecorder,
    pub(crate) call_id: usize,
}

impl ToolContext<'_> {
    /// Issues an LLM query on behalf of the tool, recorded in the trace.
    pub fn complete(&self, prompt: &str) -> Result<LlmResponse, LlmError> {
        let started = chrono::Utc::now();
        let response = self.llm.complete(prompt)?;
        self.recorder.push_tool_llm(
            self.call_id,
            self.tool_name,
            self.depth + 1,
            prompt,
            &response,
            started,
        );
        Ok(response)
    }
}

impl Completer for ToolContext<'_> {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, LlmError> {
        ToolContext::complete(self, prompt)
    }
}

pub trait Tool: Send + Sync {
    fn call(&self, input: &str, ctx: &ToolContext<'_>) -> Result<String, ToolError>;
}

struct FnTool<F>(F);

impl<F> Tool for FnTool<F>
where
    F: Fn(&str, &ToolContext<'_>) -> Result<String, ToolError> + Send + Sync,
{
    fn call(&self, input: &str, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        (self.0)(input, ctx)
    }
}

/// Wraps a closure as a [`Tool`].
pub fn tool_fn<F>(f: F) -> Arc<dyn Tool>
where
    F: Fn(&str, &ToolContext<'_>) -> Result<String, ToolError> + Send + Sync + 'static,
{
    Arc::new(FnTool(f))
}

/// Validated tool hierarchy with bound implementations.
pub struct ToolRegistry {
    entry: String,
    order: Vec<String>,
    descriptors: HashMap<String, ToolDescriptor>,
    agents: HashMap<String, AgentToolConfig>,
    impls: HashMap<String, Arc<dyn Tool>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("entry", &self.entry)
            .field("tools", &self.order)
            .finish()
    }
}

impl ToolRegistry {
    pub fn new(
        config: &RegistryConfig,
        impls: HashMap<String, Arc<dyn Tool>>,
    ) -> Result<Self, RegistryError> {
        let mut descriptors = HashMap::new();
        let mut order = Vec::new();
        for d in &config.tools {
            if descriptors.insert(d.name.clone(), d.clone()).is_some() {
                return Err(RegistryError::DuplicateTool(d.name.clone()));
            }
            order.push(d.name.clone());
        }
        let mut agents = HashMap::new();
        for a in &config.agents {
            match descriptors.get(&a.name) {
                Some(d) if d.kind == ToolKind::Agent => {}
                _ => return Err(RegistryError::OrphanAgentConfig(a.name.clone())),
            }
            if agents.insert(a.name.clone(), a.clone()).is_some() {
                return Err(RegistryError::DuplicateTool(a.name.clone()));
            }
            if a.sub_tools.is_empty() {
                return Err(RegistryError::EmptySubTools(a.name.clone()));
            }
            if a.max_steps == 0 || a.max_format_retries == 0 {
                return Err(RegistryError::ZeroBudget(a.name.clone()));
            }
            for t in &a.sub_tools {
                if !descriptors.contains_key(t) {
                    return Err(RegistryError::UnknownSubTool {
                        agent: a.name.clone(),
                        tool: t.clone(),
                    });
                }
            }
        }
        for name in &order {
            let d = &descriptors[name];
            match d.kind {
                ToolKind::Agent if !agents.contains_key(name) => {
                    return Err(RegistryError::MissingAgentConfig(name.clone()))
                }
                ToolKind::Plain if !impls.contains_key(name) => {
                    return Err(RegistryError::MissingImplementation(name.clone()))
                }
                _ => {}
            }
        }
        if !agents.contains_key(&config.entry) {
            return Err(RegistryError::MissingEntry(config.entry.clone()));
        }
        let registry = Self {
            entry: config.entry.clone(),
            order,
            descriptors,
            agents,
            impls,
        };
        registry.check_acyclic()?;
        Ok(registry)
    }

    fn check_acyclic(&self) -> Result<(), RegistryError> {
        fn visit<'a>(
            reg: &'a ToolRegistry,
            name: &'a str,
            stack: &mut Vec<&'a str>,
            done: &mut HashSet<&'a str>,
        ) -> Result<(), RegistryError> {
            if done.contains(name) {
                return Ok(());
            }
            if stack.contains(&name) {
                return Err(RegistryError::Cycle(name.to_string()));
            }
            stack.push(name);
            if let Some(cfg) = reg.agents.get(name) {
                for sub in &cfg.sub_tools {
                    visit(reg, sub, stack, done)?;
                }
            }
            stack.pop();
            done.insert(name);
            Ok(())
        }
        let mut done = HashSet::new();
        for name in &self.order {
            visit(self, name, &mut Vec::new(), &mut done)?;
        }
        Ok(())
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    pub fn descriptor(&self, name: &str) -> Option<&ToolDescriptor> {
        self.descriptors.get(name)
    }

    /// Descriptors in declaration order.
    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.order.iter().map(|n| &self.descriptors[n])
    }

    pub fn agent(&self, name: &str) -> Option<&AgentToolConfig> {
        self.agents.get(name)
    }

    pub fn is_agent(&self, name: &str) -> bool {
        self.agents.contains_key(name)
    }

    pub fn implementation(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.impls.get(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(name: &str, kind: ToolKind) -> ToolDescriptor {
        ToolDescriptor {
            name: name.into(),
            description: format!("{name} tool"),
            input_hint: "text".into(),
            kind,
        }
    }

    fn agent(name: &str, subs: &[&str]) -> AgentToolConfig {
        AgentToolConfig {
            name: name.into(),
            task_info: "task".into(),
            sub_tools: subs.iter().map(|s| s.to_string()).collect(),
            max_steps: DEFAULT_MAX_STEPS,
            max_format_retries: DEFAULT_MAX_FORMAT_RETRIES,
        }
    }

    fn echo() -> Arc<dyn Tool> {
        tool_fn(|input, _| Ok(input.to_string()))
    }

    fn impls(names: &[&str]) -> HashMap<String, Arc<dyn Tool>> {
        names.iter().map(|n| (n.to_string(), echo())).collect()
    }

    fn config(tools: Vec<ToolDescriptor>, agents: Vec<AgentToolConfig>) -> RegistryConfig {
        RegistryConfig {
            entry: "SAGE".into(),
            tools,
            agents,
            prompts: BTreeMap::new(),
        }
    }

    #[test]
    fn accepts_nested_acyclic_hierarchy() {
        let cfg = config(
            vec![
                desc("SAGE", ToolKind::Agent),
                desc("inner", ToolKind::Agent),
                desc("leaf", ToolKind::Plain),
            ],
            vec![agent("SAGE", &["inner", "leaf"]), agent("inner", &["leaf"])],
        );
        let reg = ToolRegistry::new(&cfg, impls(&["leaf"])).unwrap();
        assert_eq!(reg.entry(), "SAGE");
        assert!(reg.is_agent("inner"));
        assert!(!reg.is_agent("leaf"));
    }

    #[test]
    fn rejects_configuration_errors() {
        let base = vec![desc("SAGE", ToolKind::Agent), desc("leaf", ToolKind::Plain)];
        let cases = [
            (
                config(base.clone(), vec![agent("SAGE", &["nope"])]),
                RegistryError::UnknownSubTool {
                    agent: "SAGE".into(),
                    tool: "nope".into(),
                },
            ),
            (
                config(base.clone(), vec![agent("SAGE", &[])]),
                RegistryError::EmptySubTools("SAGE".into()),
            ),
            (config(base.clone(), vec![]), RegistryError::MissingAgentConfig("SAGE".into())),
            (
                config(
                    vec![desc("SAGE", ToolKind::Agent), desc("SAGE", ToolKind::Plain)],
                    vec![agent("SAGE", &["SAGE"])],
                ),
                RegistryError::DuplicateTool("SAGE".into()),
            ),
            (
                config(base.clone(), vec![agent("SAGE", &["leaf"]), agent("leaf", &["leaf"])]),
                RegistryError::OrphanAgentConfig("leaf".into()),
            ),
        ];
        for (cfg, expected) in cases {
            assert_eq!(ToolRegistry::new(&cfg, impls(&["leaf"])).unwrap_err(), expected);
        }
    }

    #[test]
    fn rejects_cycles_and_missing_implementations() {
        let cfg = config(
            vec![
                desc("SAGE", ToolKind::Agent),
                desc("a", ToolKind::Agent),
                desc("b", ToolKind::Agent),
            ],
            vec![agent("SAGE", &["a"]), agent("a", &["b"]), agent("b", &["a"])],
        );
        assert!(matches!(
            ToolRegistry::new(&cfg, HashMap::new()),
            Err(RegistryError::Cycle(_))
        ));

        let cfg = config(
            vec![desc("SAGE", ToolKind::Agent), desc("leaf", ToolKind::Plain)],
            vec![agent("SAGE", &["leaf"])],
        );
        assert_eq!(
            ToolRegistry::new(&cfg, HashMap::new()).unwrap_err(),
            RegistryError::MissingImplementation("leaf".into())
        );
    }

    #[test]
    fn config_defaults_budgets() {
        let cfg: RegistryConfig = serde_json::from_str(
            r#"{"tools": [{"name": "SAGE", "description": "", "input_hint": "", "kind": "agent"}],
                "agents": [{"name": "SAGE", "task_info": "", "sub_tools": ["SAGE"]}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.entry, "SAGE");
        assert_eq!(cfg.agents[0].max_steps, 15);
        assert_eq!(cfg.agents[0].max_format_retries, 3);
    }
}
