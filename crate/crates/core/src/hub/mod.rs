//! Simulated SmartThings-style device hub.
//!
//! Devices expose components, components expose capabilities, and each
//! capability's documentation declares its attributes and commands. Commands
//! change state only through the declarative effect rules in the
//! documentation; [`DeviceHub::mutate`] stands in for the outside world
//! (a door opening, a TV remote).

mod model;
mod state;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use model::{
    ArgumentDoc, AttributeDoc, CapabilityDoc, CapabilitySummary, CommandDoc, Component,
    ComponentSummary, Device, DeviceSummary, EffectRule, EffectValue, ValueSchema,
};
pub use state::{AttrPath, DeviceState};

use crate::fixtures::{read_json, FixtureError};

const CHANGE_LOG_CAPACITY: usize = 10_000;

/// REST-style error. The message is shown to the LLM verbatim, so it names
/// the offending identifier.
#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("{message}")]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: 404,
            message: message.into(),
        }
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self {
            status: 422,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeCause {
    Command { capability: String, command: String },
    Mutation,
    Restore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub seq: u64,
    pub path: AttrPath,
    pub old: Value,
    pub new: Value,
    pub cause: ChangeCause,
}

type Listener = Arc<dyn Fn(&StateChange) + Send + Sync>;

struct HubInner {
    state: DeviceState,
    log: VecDeque<StateChange>,
    next_seq: u64,
}

pub struct DeviceHub {
    devices: Vec<Device>,
    docs: BTreeMap<String, CapabilityDoc>,
    inner: RwLock<HubInner>,
    listeners: RwLock<Vec<Listener>>,
}

impl std::fmt::Debug for DeviceHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceHub")
            .field("devices", &self.devices.len())
            .field("capabilities", &self.docs.len())
            .finish()
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
struct Roster {
    devices: Vec<Device>,
}

/// Contents of a hub fixture directory: `devices.json`,
/// `capabilities/<id>.json` and `states.json`.
#[derive(Debug, Clone, Default)]
pub struct HubFixtures {
    pub devices: Vec<Device>,
    pub capabilities: Vec<CapabilityDoc>,
    pub states: DeviceState,
}

impl HubFixtures {
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let dir = dir.as_ref();
        let roster: Roster = read_json(dir.join("devices.json"))?;
        let mut capabilities = Vec::new();
        let cap_dir = dir.join("capabilities");
        if cap_dir.is_dir() {
            let mut paths: Vec<_> = std::fs::read_dir(&cap_dir)
                .map_err(|e| FixtureError::io(&cap_dir, e))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for p in paths {
                capabilities.push(read_json(p)?);
            }
        }
        let states_path = dir.join("states.json");
        let states = if states_path.exists() {
            read_json(states_path)?
        } else {
            DeviceState::new()
        };
        Ok(Self {
            devices: roster.devices,
            capabilities,
            states,
        })
    }
}

impl DeviceHub {
    pub fn from_fixtures(fixtures: HubFixtures) -> Result<Self, FixtureError> {
        Self::new(fixtures.devices, fixtures.capabilities, fixtures.states)
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, FixtureError> {
        Self::from_fixtures(HubFixtures::load_dir(dir)?)
    }

    /// Builds a hub, validating documentation closure and initial values.
    /// Declared attributes absent from `initial` start at their schema
    /// default.
    pub fn new(
        devices: Vec<Device>,
        capabilities: Vec<CapabilityDoc>,
        initial: DeviceState,
    ) -> Result<Self, FixtureError> {
        let invalid = FixtureError::Invalid;
        let mut docs = BTreeMap::new();
        for doc in capabilities {
            doc.validate().map_err(invalid)?;
            if docs.insert(doc.id.clone(), doc.clone()).is_some() {
                return Err(invalid(format!("duplicate capability '{}'", doc.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for device in &devices {
            if device.device_id.contains('/') || device.device_id.is_empty() {
                return Err(invalid(format!("invalid device id '{}'", device.device_id)));
            }
            if !seen.insert(device.device_id.clone()) {
                return Err(invalid(format!("duplicate device id '{}'", device.device_id)));
            }
            if device.component("main").is_none() {
                return Err(invalid(format!(
                    "device '{}' has no 'main' component",
                    device.device_id
                )));
            }
            let mut comp_ids = BTreeSet::new();
            for comp in &device.components {
                if !comp_ids.insert(comp.id.as_str()) {
                    return Err(invalid(format!(
                        "device '{}' repeats component '{}'",
                        device.device_id, comp.id
                    )));
                }
                for cap in &comp.capabilities {
                    if !docs.contains_key(cap) {
                        return Err(invalid(format!(
                            "device '{}' component '{}' references undocumented capability '{cap}'",
                            device.device_id, comp.id
                        )));
                    }
                }
            }
        }

        let mut state = DeviceState::new();
        for device in &devices {
            for comp in &device.components {
                for cap in &comp.capabilities {
                    for (attr, adoc) in &docs[cap].attributes {
                        let path = AttrPath::new(&device.device_id, &comp.id, cap, attr);
                        let value = match initial.get(&path) {
                            Some(v) => {
                                adoc.schema
                                    .check(v)
                                    .map_err(|e| invalid(format!("initial state {path}: {e}")))?;
                                v.clone()
                            }
                            None => adoc.schema.default_value(),
                        };
                        state.insert(path, value);
                    }
                }
            }
        }
        if let Some((path, _)) = initial.iter().find(|(p, _)| !state.contains(p)) {
            return Err(invalid(format!("initial state names undeclared attribute {path}")));
        }

        Ok(Self {
            devices,
            docs,
            inner: RwLock::new(HubInner {
                state,
                log: VecDeque::new(),
                next_seq: 1,
            }),
            listeners: RwLock::new(Vec::new()),
        })
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, device_id: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.device_id == device_id)
    }

    pub fn capability_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    /// Roster with one-line capability descriptions; never full docs.
    pub fn list_devices(&self) -> Vec<DeviceSummary> {
        self.devices
            .iter()
            .map(|d| DeviceSummary {
                device_id: d.device_id.clone(),
                label: d.label.clone(),
                room: d.room.clone(),
                components: d
                    .components
                    .iter()
                    .map(|c| ComponentSummary {
                        id: c.id.clone(),
                        capabilities: c
                            .capabilities
                            .iter()
                            .map(|cap| CapabilitySummary {
                                id: cap.clone(),
                                short_description: self.docs[cap].short_description.clone(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn capability_doc(&self, capability_id: &str) -> Result<&CapabilityDoc, ApiError> {
        self.docs
            .get(capability_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown capability '{capability_id}'")))
    }

    fn resolve(
        &self,
        device_id: &str,
        component: &str,
        capability: &str,
    ) -> Result<&CapabilityDoc, ApiError> {
        let device = self
            .device(device_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown device '{device_id}'")))?;
        let comp = device.component(component).ok_or_else(|| {
            let ids: Vec<&str> = device.components.iter().map(|c| c.id.as_str()).collect();
            ApiError::not_found(format!(
                "unknown component '{component}' on device '{device_id}' (components: {})",
                ids.join(", ")
            ))
        })?;
        if !comp.has_capability(capability) {
            return Err(ApiError::not_found(format!(
                "unknown capability '{capability}' on component '{component}' of device '{device_id}' (capabilities: {})",
                comp.capabilities.join(", ")
            )));
        }
        self.capability_doc(capability)
    }

    fn check_path(&self, path: &AttrPath) -> Result<&AttributeDoc, ApiError> {
        let doc = self.resolve(&path.device_id, &path.component, &path.capability)?;
        doc.attributes.get(&path.attribute).ok_or_else(|| {
            ApiError::unprocessable(format!(
                "unknown attribute '{}' for capability '{}'",
                path.attribute, path.capability
            ))
        })
    }

    pub fn read(&self, path: &AttrPath) -> Result<Value, ApiError> {
        self.check_path(path)?;
        Ok(self
            .inner
            .read()
            .state
            .get(path)
            .cloned()
            .expect("declared attributes always have a value"))
    }

    pub fn read_attribute(
        &self,
        device_id: &str,
        component: &str,
        capability: &str,
        attribute: &str,
    ) -> Result<Value, ApiError> {
        self.read(&AttrPath::new(device_id, component, capability, attribute))
    }

    /// Validates `arguments` positionally against the command's schema, then
    /// applies all effect rules under one write lock.
    pub fn execute_command(
        &self,
        device_id: &str,
        component: &str,
        capability: &str,
        command: &str,
        arguments: &[Value],
    ) -> Result<(), ApiError> {
        let doc = self.resolve(device_id, component, capability)?;
        let cmd = doc.commands.get(command).ok_or_else(|| {
            let names: Vec<&str> = doc.commands.keys().map(String::as_str).collect();
            ApiError::unprocessable(format!(
                "unknown command '{command}' for capability '{capability}' (commands: {})",
                if names.is_empty() { "none".to_string() } else { names.join(", ") }
            ))
        })?;
        if arguments.len() > cmd.arguments.len() {
            return Err(ApiError::unprocessable(format!(
                "command '{command}' of capability '{capability}' takes at most {} argument(s), got {}",
                cmd.arguments.len(),
                arguments.len()
            )));
        }
        let mut bound = BTreeMap::new();
        for (i, arg) in cmd.arguments.iter().enumerate() {
            match arguments.get(i) {
                Some(v) => {
                    arg.schema.check(v).map_err(|e| {
                        ApiError::unprocessable(format!(
                            "argument '{}' of command '{command}' {e}",
                            arg.name
                        ))
                    })?;
                    bound.insert(arg.name.as_str(), v.clone());
                }
                None if arg.required => {
                    return Err(ApiError::unprocessable(format!(
                        "command '{command}' of capability '{capability}' is missing required argument '{}' ({})",
                        arg.name, arg.schema
                    )))
                }
                None => {}
            }
        }
        let mut writes = Vec::new();
        for effect in &cmd.effects {
            let value = match &effect.value {
                EffectValue::Literal(v) => v.clone(),
                EffectValue::Argument(name) => match bound.get(name.as_str()) {
                    Some(v) => v.clone(),
                    None => continue, // optional argument not supplied
                },
            };
            let attr_doc = &doc.attributes[&effect.set_attribute];
            attr_doc.schema.check(&value).map_err(|e| {
                ApiError::unprocessable(format!("attribute '{}' {e}", effect.set_attribute))
            })?;
            writes.push((
                AttrPath::new(device_id, component, capability, &effect.set_attribute),
                value,
            ));
        }
        let cause = ChangeCause::Command {
            capability: capability.to_string(),
            command: command.to_string(),
        };
        self.apply(writes, cause, false);
        Ok(())
    }

    /// Writes one attribute directly, bypassing commands.
    pub fn mutate(&self, path: &AttrPath, value: Value) -> Result<(), ApiError> {
        let doc = self.check_path(path)?;
        doc.schema.check(&value).map_err(|e| {
            ApiError::unprocessable(format!("value for {path} {e}"))
        })?;
        self.apply(vec![(path.clone(), value)], ChangeCause::Mutation, false);
        Ok(())
    }

    pub fn snapshot(&self) -> DeviceState {
        self.inner.read().state.clone()
    }

    /// Replaces the whole state. Rejected wholesale unless `state` covers
    /// exactly the declared attributes with schema-conformant values.
    pub fn restore(&self, state: DeviceState) -> Result<(), ApiError> {
        {
            let inner = self.inner.read();
            for (path, value) in state.iter() {
                let doc = self.check_path(path)?;
                doc.schema
                    .check(value)
                    .map_err(|e| ApiError::unprocessable(format!("value for {path} {e}")))?;
            }
            let missing = inner.state.iter().find(|(p, _)| !state.contains(p)).map(|(p, _)| p.clone());
            if let Some(missing) = missing {
                return Err(ApiError::unprocessable(format!(
                    "restored state is missing attribute {missing}"
                )));
            }
        }
        let writes = state.iter().map(|(p, v)| (p.clone(), v.clone())).collect();
        self.apply(writes, ChangeCause::Restore, true);
        Ok(())
    }

    fn apply(&self, writes: Vec<(AttrPath, Value)>, cause: ChangeCause, only_diffs: bool) {
        let mut inner = self.inner.write();
        let listeners = self.listeners.read();
        for (path, value) in writes {
            let old = inner.state.insert(path.clone(), value.clone()).unwrap_or(Value::Null);
            if only_diffs && old == value {
                continue;
            }
            let change = StateChange {
                seq: inner.next_seq,
                path,
                old,
                new: value,
                cause: cause.clone(),
            };
            inner.next_seq += 1;
            for l in listeners.iter() {
                l(&change);
            }
            if inner.log.len() == CHANGE_LOG_CAPACITY {
                inner.log.pop_front();
            }
            inner.log.push_back(change);
        }
    }

    /// Registers a callback invoked, in write order, for every state change.
    pub fn subscribe(&self, listener: impl Fn(&StateChange) + Send + Sync + 'static) {
        self.listeners.write().push(Arc::new(listener));
    }

    /// Most recent state changes (bounded).
    pub fn change_log(&self) -> Vec<StateChange> {
        self.inner.read().log.iter().cloned().collect()
    }

    pub fn declared_paths(&self) -> Vec<AttrPath> {
        self.inner.read().state.iter().map(|(p, _)| p.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn small_hub() -> DeviceHub {
        let docs: Vec<CapabilityDoc> = serde_json::from_value(json!([
            {
                "id": "switch",
                "short_description": "Turns the device on or off",
                "attributes": {"switch": {"schema": {"type": "enum", "values": ["on", "off"]}}},
                "commands": {
                    "on": {"effects": [{"set_attribute": "switch", "value": {"literal": "on"}}]},
                    "off": {"effects": [{"set_attribute": "switch", "value": {"literal": "off"}}]}
                }
            },
            {
                "id": "tvChannel",
                "short_description": "Selects the TV channel",
                "attributes": {"tvChannel": {"schema": {"type": "string"}}},
                "commands": {
                    "setTvChannel": {
                        "arguments": [{"name": "tvChannel", "schema": {"type": "string"}}],
                        "effects": [{"set_attribute": "tvChannel", "value": {"argument": "tvChannel"}}]
                    }
                }
            },
            {
                "id": "temperatureMeasurement",
                "short_description": "Reports temperature",
                "attributes": {"temperature": {"schema": {"type": "number"}, "unit": "C"}}
            }
        ]))
        .unwrap();
        let devices: Vec<Device> = serde_json::from_value(json!([
            {"device_id": "tv-1", "label": "TV", "room": "bedroom",
             "components": [{"id": "main", "capabilities": ["switch", "tvChannel"]}]},
            {"device_id": "fridge-1", "label": "Fridge", "room": "kitchen",
             "components": [
                {"id": "main", "capabilities": []},
                {"id": "cooler", "capabilities": ["temperatureMeasurement"]},
                {"id": "freezer", "capabilities": ["temperatureMeasurement"]}
             ]}
        ]))
        .unwrap();
        let state: DeviceState = serde_json::from_value(json!({
            "tv-1": {"main": {"switch": {"switch": "off"}}},
            "fridge-1": {
                "cooler": {"temperatureMeasurement": {"temperature": 3}},
                "freezer": {"temperatureMeasurement": {"temperature": -18}}
            }
        }))
        .unwrap();
        DeviceHub::new(devices, docs, state).unwrap()
    }

    #[test]
    fn reads_initial_and_default_values() {
        let hub = small_hub();
        assert_eq!(hub.read_attribute("tv-1", "main", "switch", "switch").unwrap(), json!("off"));
        assert_eq!(hub.read_attribute("tv-1", "main", "tvChannel", "tvChannel").unwrap(), json!(""));
        assert_eq!(
            hub.read_attribute("fridge-1", "freezer", "temperatureMeasurement", "temperature")
                .unwrap(),
            json!(-18)
        );
        assert_eq!(
            hub.read_attribute("fridge-1", "cooler", "temperatureMeasurement", "temperature")
                .unwrap(),
            json!(3)
        );
    }

    #[test]
    fn errors_name_the_offending_identifier_and_level() {
        let hub = small_hub();
        let e = hub.read_attribute("tv-9", "main", "switch", "switch").unwrap_err();
        assert_eq!((e.status, e.message.as_str()), (404, "unknown device 'tv-9'"));
        let e = hub.read_attribute("fridge-1", "freezr", "temperatureMeasurement", "temperature").unwrap_err();
        assert_eq!(e.status, 404);
        assert!(e.message.contains("component 'freezr'"));
        let e = hub.read_attribute("tv-1", "main", "audioVolume", "volume").unwrap_err();
        assert!(e.message.contains("capability 'audioVolume'"));
        let e = hub.read_attribute("tv-1", "main", "switch", "swich").unwrap_err();
        assert_eq!(e.status, 422);
        assert_eq!(e.message, "unknown attribute 'swich' for capability 'switch'");
        let e = hub.capability_doc("notARealCap").unwrap_err();
        assert_eq!((e.status, e.message.as_str()), (404, "unknown capability 'notARealCap'"));
    }

    #[test]
    fn commands_apply_effects() {
        let hub = small_hub();
        hub.execute_command("tv-1", "main", "switch", "on", &[]).unwrap();
        assert_eq!(hub.read_attribute("tv-1", "main", "switch", "switch").unwrap(), json!("on"));
        hub.execute_command("tv-1", "main", "tvChannel", "setTvChannel", &[json!("7")]).unwrap();
        assert_eq!(hub.read_attribute("tv-1", "main", "tvChannel", "tvChannel").unwrap(), json!("7"));
    }

    #[test]
    fn invalid_commands_leave_state_untouched() {
        let hub = small_hub();
        let before = hub.snapshot();
        let e = hub.execute_command("tv-1", "main", "tvChannel", "setTvChannel", &[]).unwrap_err();
        assert_eq!(e.status, 422);
        assert!(e.message.contains("missing required argument 'tvChannel'"));
        let e = hub.execute_command("tv-1", "main", "tvChannel", "setTvChannel", &[json!(7)]).unwrap_err();
        assert!(e.message.contains("expects string, got integer 7"));
        let e = hub.execute_command("tv-1", "main", "switch", "toggle", &[]).unwrap_err();
        assert!(e.message.contains("unknown command 'toggle'"));
        let e = hub.execute_command("tv-1", "main", "switch", "on", &[json!(1)]).unwrap_err();
        assert!(e.message.contains("at most 0"));
        assert_eq!(hub.snapshot(), before);
        assert!(hub.change_log().is_empty());
    }

    #[test]
    fn snapshot_restore_are_inverses() {
        let hub = small_hub();
        let snap = hub.snapshot();
        hub.execute_command("tv-1", "main", "switch", "on", &[]).unwrap();
        hub.restore(snap.clone()).unwrap();
        assert_eq!(hub.snapshot(), snap);
        hub.restore(hub.snapshot()).unwrap();
        assert_eq!(hub.snapshot(), snap);
    }

    #[test]
    fn nonconformant_restore_is_rejected_wholesale() {
        let hub = small_hub();
        let before = hub.snapshot();
        let mut bad = hub.snapshot();
        bad.insert(AttrPath::new("tv-1", "main", "tvChannel", "tvChannel"), json!("9"));
        bad.insert(AttrPath::new("tv-1", "main", "switch", "switch"), json!("dim"));
        assert_eq!(hub.restore(bad).unwrap_err().status, 422);
        assert_eq!(hub.snapshot(), before);

        let partial = before.for_device("tv-1");
        assert!(hub.restore(partial).unwrap_err().message.contains("missing attribute"));
    }

    #[test]
    fn mutation_emits_change_events_in_order() {
        let hub = small_hub();
        let seen = Arc::new(parking_lot::Mutex::new(Vec::new()));
        let sink = seen.clone();
        hub.subscribe(move |c| sink.lock().push(c.clone()));
        let door = AttrPath::new("tv-1", "main", "switch", "switch");
        hub.mutate(&door, json!("on")).unwrap();
        hub.execute_command("tv-1", "main", "switch", "off", &[]).unwrap();
        let seen = seen.lock();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[0].cause, ChangeCause::Mutation);
        assert_eq!(seen[1].new, json!("off"));
        assert!(seen[0].seq < seen[1].seq);
        assert!(hub.mutate(&door, json!(true)).is_err());
    }

    #[test]
    fn construction_rejects_broken_rosters() {
        let docs = vec![];
        let devices: Vec<Device> = serde_json::from_value(json!([
            {"device_id": "x", "label": "", "room": "", "components": [{"id": "main", "capabilities": ["switch"]}]}
        ]))
        .unwrap();
        let err = DeviceHub::new(devices, docs, DeviceState::new()).unwrap_err();
        assert!(err.to_string().contains("undocumented capability 'switch'"));
    }

    #[test]
    fn summaries_carry_no_commands() {
        let hub = small_hub();
        let v = serde_json::to_value(hub.list_devices()).unwrap();
        assert!(!v.to_string().contains("commands"));
        assert_eq!(v[0]["components"][0]["capabilities"][0]["id"], "switch");
    }
}
