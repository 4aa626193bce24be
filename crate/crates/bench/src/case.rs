//! Task-case format and suite loading.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use sage_core::fixtures::{read_json, FixtureError};
use sage_core::hub::{AttrPath, DeviceState};
use sage_core::personalization::MemorySeed;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Personalization,
    IntentResolution,
    DeviceResolution,
    Persistence,
    CommandChaining,
    DirectCommand,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Personalization,
        Category::IntentResolution,
        Category::DeviceResolution,
        Category::Persistence,
        Category::CommandChaining,
        Category::DirectCommand,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Personalization => "Personalization",
            Category::IntentResolution => "Intent resolution",
            Category::DeviceResolution => "Device resolution",
            Category::Persistence => "Persistence",
            Category::CommandChaining => "Command chaining",
            Category::DirectCommand => "Direct command",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub path: AttrPath,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    /// Applied right before the poll with this index.
    pub after_tick: u32,
    pub mutate: Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePredicate {
    pub path: AttrPath,
    pub expected_value: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    Substring,
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSpec {
    DevicePredicates(Vec<DevicePredicate>),
    AnswerContains {
        expected_info: String,
        #[serde(default)]
        mode: AnswerMode,
    },
}

fn default_user() -> String {
    "tester".into()
}

fn default_extra_ticks() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskCase {
    pub id: String,
    pub categories: BTreeSet<Category>,
    #[serde(default = "default_user")]
    pub user_id: String,
    #[serde(default)]
    pub initial_device_states: DeviceState,
    #[serde(default)]
    pub memory_seed: Vec<MemorySeed>,
    #[serde(default)]
    pub scheduled_events: Vec<ScheduledEvent>,
    /// Polls run after the last scheduled event.
    #[serde(default = "default_extra_ticks")]
    pub extra_ticks: u32,
    /// Number of trigger fires a passing run must produce.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_trigger_fires: Option<u32>,
    pub input_command: String,
    pub validation: ValidationSpec,
    /// State shown to the single-prompt baseline.
    #[serde(default)]
    pub selected_state_paths: Vec<AttrPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TaskCase {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("case id must not be empty".into());
        }
        if self.categories.is_empty() {
            return Err("at least one category is required".into());
        }
        if self.categories.contains(&Category::DirectCommand) && self.categories.len() > 1 {
            return Err("DirectCommand cannot be combined with other categories".into());
        }
        if self.categories.contains(&Category::Persistence) {
            if self.scheduled_events.is_empty() {
                return Err("Persistence cases need scheduled_events".into());
            }
            if self.expected_trigger_fires.is_none() {
                return Err("Persistence cases need expected_trigger_fires".into());
            }
        }
        if self.input_command.trim().is_empty() {
            return Err("input_command must not be empty".into());
        }
        match &self.validation {
            ValidationSpec::DevicePredicates(p) if p.is_empty() => Err("validation needs at least one predicate".into()),
            ValidationSpec::AnswerContains { expected_info, .. } if expected_info.trim().is_empty() => {
                Err("expected_info must not be empty".into())
            }
            _ => Ok(()),
        }
    }

    /// Number of polls a run performs after the session.
    pub fn total_ticks(&self) -> u32 {
        if self.scheduled_events.is_empty() {
            return 0;
        }
        self.scheduled_events.iter().map(|e| e.after_tick).max().unwrap_or(0) + 1 + self.extra_ticks
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{0}")]
    Fixture(#[from] FixtureError),
    #[error("{path}: {message}")]
    InvalidCase { path: PathBuf, message: String },
    #[error("suite {0} contains no cases")]
    Empty(PathBuf),
    #[error("duplicate case id '{0}'")]
    DuplicateId(String),
}

#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub path: PathBuf,
    pub case: TaskCase,
}

/// A suite directory: `tasks/*.json` plus `replays/`.
#[derive(Debug, Clone)]
pub struct Suite {
    pub dir: PathBuf,
    pub name: String,
    pub cases: Vec<LoadedCase>,
}

impl Suite {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let dir = dir.as_ref().to_path_buf();
        let tasks = dir.join("tasks");
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&tasks)
            .map_err(|e| FixtureError::io(&tasks, e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(SuiteError::Empty(dir));
        }
        let mut cases = Vec::new();
        let mut seen = BTreeSet::new();
        for path in paths {
            let case: TaskCase = read_json(&path)?;
            case.validate()
                .map_err(|message| SuiteError::InvalidCase { path: path.clone(), message })?;
            if !seen.insert(case.id.clone()) {
                return Err(SuiteError::DuplicateId(case.id));
            }
            cases.push(LoadedCase { path, case });
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "suite".into());
        Ok(Self { dir, name, cases })
    }

    pub fn replay_dir(&self) -> PathBuf {
        self.dir.join("replays")
    }

    pub fn categories(&self) -> BTreeSet<Category> {
        self.cases.iter().flat_map(|c| c.case.categories.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn case(v: Value) -> TaskCase {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn direct_command_is_exclusive() {
        let c = case(json!({
            "id": "x", "categories": ["DirectCommand", "Personalization"], "input_command": "hi",
            "validation": {"answer_contains": {"expected_info": "a"}}
        }));
        assert!(c.validate().unwrap_err().contains("DirectCommand"));
    }

    #[test]
    fn persistence_needs_events() {
        let c = case(json!({
            "id": "x", "categories": ["Persistence"], "input_command": "hi", "expected_trigger_fires": 1,
            "validation": {"device_predicates": [{"path": "a/b/c/d", "expected_value": "on"}]}
        }));
        assert!(c.validate().unwrap_err().contains("scheduled_events"));
    }

    #[test]
    fn tick_count() {
        let c = case(json!({
            "id": "x", "categories": ["Persistence"], "input_command": "hi", "expected_trigger_fires": 1,
            "scheduled_events": [{"after_tick": 2, "mutate": {"path": "a/b/c/d", "value": 1}}],
            "validation": {"device_predicates": [{"path": "a/b/c/d", "expected_value": "on"}]}
        }));
        assert!(c.validate().is_ok());
        assert_eq!(c.total_ticks(), 6);
    }

    #[test]
    fn empty_suite_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("tasks")).unwrap();
        assert!(matches!(Suite::load(dir.path()), Err(SuiteError::Empty(_))));
    }

    #[test]
    fn malformed_case_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("tasks")).unwrap();
        std::fs::write(dir.path().join("tasks/bad.json"), "{\"id\": 3}").unwrap();
        let err = Suite::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("bad.json"), "{err}");
    }
}
