use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// `(device, component, capability, attribute)`; written `d/c/cap/attr`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttrPath {
    pub device_id: String,
    pub component: String,
    pub capability: String,
    pub attribute: String,
}

impl AttrPath {
    pub fn new(
        device_id: impl Into<String>,
        component: impl Into<String>,
        capability: impl Into<String>,
        attribute: impl Into<String>,
    ) -> Self {
        Self {
            device_id: device_id.into(),
            component: component.into(),
            capability: capability.into(),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for AttrPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.device_id, self.component, self.capability, self.attribute
        )
    }
}

impl FromStr for AttrPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').map(str::trim).collect();
        match parts.as_slice() {
            [d, c, cap, a] if parts.iter().all(|p| !p.is_empty()) => Ok(Self::new(*d, *c, *cap, *a)),
            _ => Err(format!(
                "invalid attribute path '{s}': expected device/component/capability/attribute"
            )),
        }
    }
}

impl Serialize for AttrPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttrPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

type Nested = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, Value>>>>;

/// Full attribute map of the home. Serialized as
/// `{device: {component: {capability: {attribute: value}}}}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceState(BTreeMap<AttrPath, Value>);

impl DeviceState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, path: &AttrPath) -> Option<&Value> {
        self.0.get(path)
    }

    pub fn insert(&mut self, path: AttrPath, value: Value) -> Option<Value> {
        self.0.insert(path, value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AttrPath, &Value)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, path: &AttrPath) -> bool {
        self.0.contains_key(path)
    }

    /// Restricts to paths under `device_id`.
    pub fn for_device(&self, device_id: &str) -> DeviceState {
        DeviceState(
            self.0
                .iter()
                .filter(|(p, _)| p.device_id == device_id)
                .map(|(p, v)| (p.clone(), v.clone()))
                .collect(),
        )
    }

    fn to_nested(&self) -> Nested {
        let mut nested = Nested::new();
        for (p, v) in &self.0 {
            nested
                .entry(p.device_id.clone())
                .or_default()
                .entry(p.component.clone())
                .or_default()
                .entry(p.capability.clone())
                .or_default()
                .insert(p.attribute.clone(), v.clone());
        }
        nested
    }

    fn from_nested(nested: Nested) -> Self {
        let mut map = BTreeMap::new();
        for (d, comps) in nested {
            for (c, caps) in comps {
                for (cap, attrs) in caps {
                    for (a, v) in attrs {
                        map.insert(AttrPath::new(d.clone(), c.clone(), cap.clone(), a), v);
                    }
                }
            }
        }
        Self(map)
    }
}

impl FromIterator<(AttrPath, Value)> for DeviceState {
    fn from_iter<T: IntoIterator<Item = (AttrPath, Value)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl Serialize for DeviceState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DeviceState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Nested::deserialize(deserializer).map(Self::from_nested)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn path_parses_and_rejects_bad_shapes() {
        let p: AttrPath = "tv-1/main/switch/switch".parse().unwrap();
        assert_eq!(p, AttrPath::new("tv-1", "main", "switch", "switch"));
        assert!("tv-1/main/switch".parse::<AttrPath>().is_err());
        assert!("tv-1//switch/switch".parse::<AttrPath>().is_err());
    }

    #[test]
    fn state_uses_nested_json() {
        let s: DeviceState = [(AttrPath::new("tv-1", "main", "switch", "switch"), json!("off"))]
            .into_iter()
            .collect();
        assert_eq!(
            serde_json::to_value(&s).unwrap(),
            json!({"tv-1": {"main": {"switch": {"switch": "off"}}}})
        );
    }

    fn segment() -> impl Strategy<Value = String> {
        "[a-z][a-zA-Z0-9_-]{0,8}"
    }

    proptest! {
        #[test]
        fn state_json_round_trip(entries in proptest::collection::vec(
            ((segment(), segment(), segment(), segment()), -1000i64..1000), 0..20)
        ) {
            let s: DeviceState = entries
                .into_iter()
                .map(|((d, c, cap, a), v)| (AttrPath::new(d, c, cap, a), json!(v)))
                .collect();
            let text = serde_json::to_string(&s).unwrap();
            prop_assert_eq!(serde_json::from_str::<DeviceState>(&text).unwrap(), s);
        }
    }
}
