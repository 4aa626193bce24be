use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::{info, warn};

use super::dsl::{eval_condition, parse_condition, AttrSource, Condition, ParseError};
use crate::events::{EventBus, EventType};
use crate::fixtures::{read_json, FixtureError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("invalid condition name '{0}': use letters, digits and underscores")]
    InvalidName(String),
    #[error("condition name '{0}' already registered")]
    DuplicateCondition(String),
    #[error("unknown condition '{0}'")]
    UnknownCondition(String),
    #[error("unknown trigger '{0}'")]
    UnknownTrigger(String),
    #[error("the trigger action must not be empty")]
    EmptyAction,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredCondition {
    pub name: String,
    pub source: String,
    pub ast: Condition,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriState {
    #[default]
    Unknown,
    False,
    True,
}

impl From<bool> for TriState {
    fn from(b: bool) -> Self {
        if b {
            TriState::True
        } else {
            TriState::False
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRegistration {
    pub trigger_id: String,
    pub condition_name: String,
    pub action_command: String,
    pub user_id: String,
    pub last_value: TriState,
    pub enabled: bool,
    pub fire_count: u64,
    pub created_at: DateTime<Utc>,
}

/// A trigger that fired during a tick; the caller runs `action_command`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiredTrigger {
    pub trigger_id: String,
    pub condition_name: String,
    pub action_command: String,
    pub user_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub evaluated: usize,
    pub fired: Vec<FiredTrigger>,
    pub errors: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredCondition {
    name: String,
    source: String,
    created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StoreFile {
    #[serde(default)]
    next_trigger: u64,
    #[serde(default)]
    conditions: Vec<StoredCondition>,
    #[serde(default)]
    triggers: Vec<TriggerRegistration>,
}

#[derive(Debug, Default)]
struct State {
    conditions: BTreeMap<String, RegisteredCondition>,
    triggers: BTreeMap<u64, TriggerRegistration>,
    next_trigger: u64,
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn trigger_number(id: &str) -> Option<u64> {
    id.strip_prefix("trigger-")?.parse().ok()
}

/// Registered conditions plus edge-triggered polling registrations.
pub struct Monitor {
    state: Mutex<State>,
    persist_path: Option<PathBuf>,
    events: Option<EventBus>,
}

impl std::fmt::Debug for Monitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.state.lock();
        f.debug_struct("Monitor")
            .field("conditions", &s.conditions.len())
            .field("triggers", &s.triggers.len())
            .finish()
    }
}

impl Default for Monitor {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Monitor {
    pub fn new(events: Option<EventBus>) -> Self {
        Self {
            state: Mutex::new(State {
                next_trigger: 1,
                ..State::default()
            }),
            persist_path: None,
            events,
        }
    }

    /// Loads `path` if it exists and persists every change back to it.
    pub fn with_store(path: impl Into<PathBuf>, events: Option<EventBus>) -> Result<Self, FixtureError> {
        let path = path.into();
        let mut state = State {
            next_trigger: 1,
            ..State::default()
        };
        if path.exists() {
            let file: StoreFile = read_json(&path)?;
            for c in file.conditions {
                let ast = parse_condition(&c.source).map_err(|e| {
                    FixtureError::Invalid(format!("{}: condition '{}': {e}", path.display(), c.name))
                })?;
                state.conditions.insert(
                    c.name.clone(),
                    RegisteredCondition {
                        name: c.name,
                        source: c.source,
                        ast,
                        created_at: c.created_at,
                    },
                );
            }
            for t in file.triggers {
                let n = trigger_number(&t.trigger_id).ok_or_else(|| {
                    FixtureError::Invalid(format!("{}: bad trigger id '{}'", path.display(), t.trigger_id))
                })?;
                if !state.conditions.contains_key(&t.condition_name) {
                    return Err(FixtureError::Invalid(format!(
                        "{}: trigger '{}' references unknown condition '{}'",
                        path.display(),
                        t.trigger_id,
                        t.condition_name
                    )));
                }
                state.next_trigger = state.next_trigger.max(n + 1);
                state.triggers.insert(n, t);
            }
            state.next_trigger = state.next_trigger.max(file.next_trigger);
        }
        Ok(Self {
            state: Mutex::new(state),
            persist_path: Some(path),
            events,
        })
    }

    fn persist(&self, state: &State) {
        let Some(path) = &self.persist_path else {
            return;
        };
        let file = StoreFile {
            next_trigger: state.next_trigger,
            conditions: state
                .conditions
                .values()
                .map(|c| StoredCondition {
                    name: c.name.clone(),
                    source: c.source.clone(),
                    created_at: c.created_at,
                })
                .collect(),
            triggers: state.triggers.values().cloned().collect(),
        };
        if let Err(e) = write_atomic(path, &file) {
            warn!(path = %path.display(), error = %e, "failed to persist triggers");
        }
    }

    /// Removes every condition and trigger and restarts trigger numbering.
    pub fn reset(&self) {
        let mut state = self.state.lock();
        *state = State {
            next_trigger: 1,
            ..State::default()
        };
        self.persist(&state);
    }

    fn publish_update(&self, t: &TriggerRegistration, change: &str) {
        if let Some(bus) = &self.events {
            bus.publish(
                EventType::TriggerUpdated,
                json!({"trigger_id": t.trigger_id, "change": change, "trigger": t}),
            );
        }
    }

    pub fn register_condition(&self, name: &str, source: &str) -> Result<RegisteredCondition, MonitorError> {
        let ast = parse_condition(source)?;
        self.register_parsed(name, source, ast)
    }

    pub(crate) fn register_parsed(
        &self,
        name: &str,
        source: &str,
        ast: Condition,
    ) -> Result<RegisteredCondition, MonitorError> {
        if !valid_name(name) {
            return Err(MonitorError::InvalidName(name.into()));
        }
        let mut state = self.state.lock();
        if state.conditions.contains_key(name) {
            return Err(MonitorError::DuplicateCondition(name.into()));
        }
        let cond = RegisteredCondition {
            name: name.into(),
            source: source.trim().into(),
            ast,
            created_at: Utc::now(),
        };
        state.conditions.insert(name.into(), cond.clone());
        self.persist(&state);
        Ok(cond)
    }

    pub fn condition(&self, name: &str) -> Option<RegisteredCondition> {
        self.state.lock().conditions.get(name).cloned()
    }

    pub fn conditions(&self) -> Vec<RegisteredCondition> {
        self.state.lock().conditions.values().cloned().collect()
    }

    pub fn register_trigger(
        &self,
        condition_name: &str,
        action_command: &str,
        user_id: &str,
    ) -> Result<TriggerRegistration, MonitorError> {
        if action_command.trim().is_empty() {
            return Err(MonitorError::EmptyAction);
        }
        let mut state = self.state.lock();
        if !state.conditions.contains_key(condition_name) {
            return Err(MonitorError::UnknownCondition(condition_name.into()));
        }
        let n = state.next_trigger;
        state.next_trigger += 1;
        let t = TriggerRegistration {
            trigger_id: format!("trigger-{n}"),
            condition_name: condition_name.into(),
            action_command: action_command.trim().into(),
            user_id: user_id.into(),
            last_value: TriState::Unknown,
            enabled: true,
            fire_count: 0,
            created_at: Utc::now(),
        };
        state.triggers.insert(n, t.clone());
        self.persist(&state);
        drop(state);
        self.publish_update(&t, "registered");
        Ok(t)
    }

    pub fn triggers(&self) -> Vec<TriggerRegistration> {
        self.state.lock().triggers.values().cloned().collect()
    }

    pub fn trigger(&self, trigger_id: &str) -> Option<TriggerRegistration> {
        let n = trigger_number(trigger_id)?;
        self.state.lock().triggers.get(&n).cloned()
    }

    pub fn set_enabled(&self, trigger_id: &str, enabled: bool) -> Result<TriggerRegistration, MonitorError> {
        let mut state = self.state.lock();
        let t = trigger_number(trigger_id)
            .and_then(|n| state.triggers.get_mut(&n))
            .ok_or_else(|| MonitorError::UnknownTrigger(trigger_id.into()))?;
        t.enabled = enabled;
        let t = t.clone();
        self.persist(&state);
        drop(state);
        self.publish_update(&t, if enabled { "enabled" } else { "disabled" });
        Ok(t)
    }

    pub fn delete_trigger(&self, trigger_id: &str) -> Result<TriggerRegistration, MonitorError> {
        let mut state = self.state.lock();
        let t = trigger_number(trigger_id)
            .and_then(|n| state.triggers.remove(&n))
            .ok_or_else(|| MonitorError::UnknownTrigger(trigger_id.into()))?;
        self.persist(&state);
        drop(state);
        self.publish_update(&t, "deleted");
        Ok(t)
    }

    /// Evaluates every enabled trigger once. A trigger fires when its
    /// condition is true and its previous value was unknown or false.
    pub fn poll_tick(&self, source: &dyn AttrSource) -> TickReport {
        let mut state = self.state.lock();
        let mut report = TickReport::default();
        let mut changed = false;
        let State {
            conditions,
            triggers,
            ..
        } = &mut *state;
        for t in triggers.values_mut().filter(|t| t.enabled) {
            let Some(cond) = conditions.get(&t.condition_name) else {
                report
                    .errors
                    .push((t.trigger_id.clone(), format!("unknown condition '{}'", t.condition_name)));
                continue;
            };
            report.evaluated += 1;
            match eval_condition(&cond.ast, source) {
                Ok(value) => {
                    if value && t.last_value != TriState::True {
                        t.fire_count += 1;
                        report.fired.push(FiredTrigger {
                            trigger_id: t.trigger_id.clone(),
                            condition_name: t.condition_name.clone(),
                            action_command: t.action_command.clone(),
                            user_id: t.user_id.clone(),
                        });
                    }
                    changed |= t.last_value != TriState::from(value);
                    t.last_value = value.into();
                }
                Err(e) => {
                    warn!(trigger = %t.trigger_id, error = %e, "condition evaluation failed");
                    report.errors.push((t.trigger_id.clone(), e.to_string()));
                }
            }
        }
        if changed {
            self.persist(&state);
        }
        drop(state);
        if let Some(bus) = &self.events {
            for f in &report.fired {
                info!(trigger = %f.trigger_id, action = %f.action_command, "trigger fired");
                bus.publish(
                    EventType::TriggerFired,
                    json!({"trigger_id": f.trigger_id, "action_command": f.action_command}),
                );
            }
        }
        report
    }
}

fn write_atomic(path: &Path, file: &StoreFile) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(std::io::Error::other)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hub::{AttrPath, DeviceState};
    use serde_json::json;

    fn tv(value: &str) -> DeviceState {
        [(AttrPath::new("tv-1", "main", "switch", "switch"), json!(value))]
            .into_iter()
            .collect()
    }

    fn monitor() -> Monitor {
        let m = Monitor::default();
        m.register_condition("is_tv_off", r#"device(tv-1, main, switch, switch) == "off""#)
            .unwrap();
        m
    }

    #[test]
    fn fires_once_per_rising_edge() {
        let m = monitor();
        let t = m.register_trigger("is_tv_off", "turn the lights on", "u").unwrap();
        assert_eq!(t.last_value, TriState::Unknown);
        let mut fires = 0;
        for s in ["on", "off", "off", "on", "off"] {
            fires += m.poll_tick(&tv(s)).fired.len();
        }
        assert_eq!(fires, 2);
        assert_eq!(m.trigger(&t.trigger_id).unwrap().fire_count, 2);
    }

    #[test]
    fn unknown_to_true_fires_and_sustained_truth_does_not() {
        let m = monitor();
        m.register_trigger("is_tv_off", "x", "u").unwrap();
        let fires: usize = (0..100).map(|_| m.poll_tick(&tv("off")).fired.len()).sum();
        assert_eq!(fires, 1);
    }

    #[test]
    fn eval_errors_keep_last_value_and_do_not_block_others() {
        let m = monitor();
        m.register_condition("broken", "device(ghost, main, switch, switch) == 1").unwrap();
        let bad = m.register_trigger("broken", "x", "u").unwrap();
        m.register_trigger("is_tv_off", "y", "u").unwrap();
        let r = m.poll_tick(&tv("off"));
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.fired.len(), 1);
        assert_eq!(m.trigger(&bad.trigger_id).unwrap().last_value, TriState::Unknown);
    }

    #[test]
    fn registration_errors() {
        let m = monitor();
        assert_eq!(
            m.register_condition("is_tv_off", "1 == 1"),
            Err(MonitorError::DuplicateCondition("is_tv_off".into()))
        );
        assert!(matches!(m.register_condition("bad name", "1 == 1"), Err(MonitorError::InvalidName(_))));
        assert!(matches!(m.register_condition("x", "1 = 1"), Err(MonitorError::Parse(_))));
        assert_eq!(
            m.register_trigger("nope", "x", "u"),
            Err(MonitorError::UnknownCondition("nope".into()))
        );
    }

    #[test]
    fn disabled_triggers_are_skipped_and_deletion_works() {
        let m = monitor();
        let t = m.register_trigger("is_tv_off", "x", "u").unwrap();
        m.set_enabled(&t.trigger_id, false).unwrap();
        assert!(m.poll_tick(&tv("off")).fired.is_empty());
        m.set_enabled(&t.trigger_id, true).unwrap();
        assert_eq!(m.poll_tick(&tv("off")).fired.len(), 1);
        m.delete_trigger(&t.trigger_id).unwrap();
        assert!(m.triggers().is_empty());
        assert!(m.delete_trigger(&t.trigger_id).is_err());
    }

    #[test]
    fn store_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triggers.json");
        {
            let m = Monitor::with_store(&path, None).unwrap();
            m.register_condition("is_tv_off", r#"device(tv-1, main, switch, switch) == "off""#)
                .unwrap();
            m.register_trigger("is_tv_off", "turn the lights on", "u").unwrap();
            m.poll_tick(&tv("off"));
        }
        let m = Monitor::with_store(&path, None).unwrap();
        let t = &m.triggers()[0];
        assert_eq!(t.fire_count, 1);
        assert_eq!(t.last_value, TriState::True);
        assert!(m.poll_tick(&tv("off")).fired.is_empty());
        let next = m.register_trigger("is_tv_off", "again", "u").unwrap();
        assert_eq!(next.trigger_id, "trigger-2");
    }
}
