use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub device_id: String,
    pub label: String,
    pub room: String,
    pub components: Vec<Component>,
    /// Fixture key standing in for the device photo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl Device {
    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub capabilities: Vec<String>,
}

impl Component {
    pub fn has_capability(&self, id: &str) -> bool {
        self.capabilities.iter().any(|c| c == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ValueSchema {
    String,
    Number {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        minimum: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        maximum: Option<f64>,
    },
    Integer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        minimum: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        maximum: Option<i64>,
    },
    Boolean,
    Enum { values: Vec<String> },
}

impl fmt::Display for ValueSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueSchema::String => f.write_str("string"),
            ValueSchema::Number { .. } => f.write_str("number"),
            ValueSchema::Integer { .. } => f.write_str("integer"),
            ValueSchema::Boolean => f.write_str("boolean"),
            ValueSchema::Enum { values } => write!(f, "one of [{}]", values.join(", ")),
        }
    }
}

fn json_kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn range_error<T: fmt::Display>(min: Option<T>, max: Option<T>) -> String {
    match (min, max) {
        (Some(a), Some(b)) => format!("must be between {a} and {b}"),
        (Some(a), None) => format!("must be at least {a}"),
        (None, Some(b)) => format!("must be at most {b}"),
        (None, None) => unreachable!(),
    }
}

impl ValueSchema {
    /// `Err` carries a human-readable description of the mismatch.
    pub fn check(&self, value: &Value) -> Result<(), String> {
        let mismatch = || format!("expects {self}, got {} {value}", json_kind(value));
        match self {
            ValueSchema::String => value.as_str().map(|_| ()).ok_or_else(mismatch),
            ValueSchema::Boolean => value.as_bool().map(|_| ()).ok_or_else(mismatch),
            ValueSchema::Enum { values } => match value.as_str() {
                Some(s) if values.iter().any(|v| v == s) => Ok(()),
                _ => Err(mismatch()),
            },
            ValueSchema::Number { minimum, maximum } => {
                let n = value.as_f64().ok_or_else(mismatch)?;
                if minimum.is_some_and(|m| n < m) || maximum.is_some_and(|m| n > m) {
                    return Err(format!("{}, got {value}", range_error(*minimum, *maximum)));
                }
                Ok(())
            }
            ValueSchema::Integer { minimum, maximum } => {
                let n = value.as_i64().ok_or_else(mismatch)?;
                if minimum.is_some_and(|m| n < m) || maximum.is_some_and(|m| n > m) {
                    return Err(format!("{}, got {value}", range_error(*minimum, *maximum)));
                }
                Ok(())
            }
        }
    }

    pub fn default_value(&self) -> Value {
        match self {
            ValueSchema::String => Value::String(String::new()),
            ValueSchema::Number { minimum, .. } => serde_json::json!(minimum.unwrap_or(0.0)),
            ValueSchema::Integer { minimum, .. } => serde_json::json!(minimum.unwrap_or(0)),
            ValueSchema::Boolean => Value::Bool(false),
            ValueSchema::Enum { values } => {
                Value::String(values.first().cloned().unwrap_or_default())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDoc {
    pub schema: ValueSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgumentDoc {
    pub name: String,
    pub schema: ValueSchema,
    #[serde(default = "default_true")]
    pub required: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectValue {
    Literal(Value),
    Argument(String),
}

/// Declarative state change applied when a command succeeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRule {
    pub set_attribute: String,
    pub value: EffectValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub arguments: Vec<ArgumentDoc>,
    /// Simulator-only; never part of the published documentation.
    #[serde(default, skip_serializing)]
    pub effects: Vec<EffectRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityDoc {
    pub id: String,
    pub short_description: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttributeDoc>,
    #[serde(default)]
    pub commands: BTreeMap<String, CommandDoc>,
}

impl CapabilityDoc {
    /// Checks that effects only write declared attributes with values their
    /// schemas accept, and only reference declared arguments.
    pub fn validate(&self) -> Result<(), String> {
        for (cmd_name, cmd) in &self.commands {
            for effect in &cmd.effects {
                let attr = self.attributes.get(&effect.set_attribute).ok_or_else(|| {
                    format!(
                        "capability '{}': command '{cmd_name}' writes undeclared attribute '{}'",
                        self.id, effect.set_attribute
                    )
                })?;
                match &effect.value {
                    EffectValue::Literal(v) => attr.schema.check(v).map_err(|e| {
                        format!(
                            "capability '{}': command '{cmd_name}' literal for '{}' {e}",
                            self.id, effect.set_attribute
                        )
                    })?,
                    EffectValue::Argument(arg) => {
                        if !cmd.arguments.iter().any(|a| &a.name == arg) {
                            return Err(format!(
                                "capability '{}': command '{cmd_name}' effect references undeclared argument '{arg}'",
                                self.id
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Published JSON form, as served to tools and over HTTP.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("capability doc serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilitySummary {
    pub id: String,
    pub short_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub id: String,
    pub capabilities: Vec<CapabilitySummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device_id: String,
    pub label: String,
    pub room: String,
    pub components: Vec<ComponentSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn schema_checks_describe_the_mismatch() {
        let level = ValueSchema::Integer {
            minimum: Some(0),
            maximum: Some(100),
        };
        assert!(level.check(&json!(50)).is_ok());
        assert_eq!(level.check(&json!("50")).unwrap_err(), "expects integer, got string \"50\"");
        assert_eq!(level.check(&json!(150)).unwrap_err(), "must be between 0 and 100, got 150");
        let sw = ValueSchema::Enum {
            values: vec!["on".into(), "off".into()],
        };
        assert!(sw.check(&json!("on")).is_ok());
        assert!(sw.check(&json!("dim")).unwrap_err().contains("one of [on, off]"));
        assert!(ValueSchema::Number {
            minimum: None,
            maximum: None
        }
        .check(&json!(-18.5))
        .is_ok());
    }

    #[test]
    fn schema_serializes_with_type_tag() {
        let s: ValueSchema = serde_json::from_value(json!({"type": "enum", "values": ["a"]})).unwrap();
        assert_eq!(s, ValueSchema::Enum { values: vec!["a".into()] });
        assert_eq!(serde_json::to_value(ValueSchema::Boolean).unwrap(), json!({"type": "boolean"}));
    }

    #[test]
    fn effects_are_hidden_from_published_docs() {
        let doc: CapabilityDoc = serde_json::from_value(json!({
            "id": "switch",
            "short_description": "on/off",
            "attributes": {"switch": {"schema": {"type": "enum", "values": ["on", "off"]}}},
            "commands": {"on": {"arguments": [], "effects": [{"set_attribute": "switch", "value": {"literal": "on"}}]}}
        }))
        .unwrap();
        assert_eq!(doc.commands["on"].effects.len(), 1);
        assert!(!doc.to_json().contains("effects"));
        doc.validate().unwrap();
    }

    #[test]
    fn validation_rejects_effects_on_undeclared_attributes() {
        let doc: CapabilityDoc = serde_json::from_value(json!({
            "id": "x",
            "short_description": "",
            "commands": {"go": {"effects": [{"set_attribute": "nope", "value": {"literal": 1}}]}}
        }))
        .unwrap();
        assert!(doc.validate().unwrap_err().contains("undeclared attribute 'nope'"));
    }
}
