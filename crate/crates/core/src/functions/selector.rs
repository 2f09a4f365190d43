//! Device selectors: the small conjunctive query language used by function
//! documents to name their targets.
//!
//! A selector is whitespace-separated terms, all of which must match:
//!
//! * `all` — every device
//! * `id:n1,n2,n3` — an explicit id list
//! * `class:constrained` | `class:infrastructure` | `class:edge`
//! * `with:<sensor>` — devices owning the sensor

use crate::ids::{DeviceId, SensorKind};
use crate::sim::{DeviceClass, Topology};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectorError {
    #[error("empty selector")]
    Empty,
    #[error("unknown selector term `{0}`")]
    UnknownTerm(String),
    #[error("unknown device class `{0}`")]
    UnknownClass(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selector {
    pub all: bool,
    pub ids: Option<Vec<DeviceId>>,
    pub class: Option<DeviceClass>,
    pub with_sensor: Option<SensorKind>,
}

impl Selector {
    pub fn parse(text: &str) -> Result<Self, SelectorError> {
        let mut sel = Selector::default();
        let mut terms = 0;
        for term in text.split_whitespace() {
            terms += 1;
            if term == "all" {
                sel.all = true;
            } else if let Some(list) = term.strip_prefix("id:") {
                let ids: Vec<DeviceId> = list
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(DeviceId::from)
                    .collect();
                if ids.is_empty() {
                    return Err(SelectorError::Empty);
                }
                sel.ids = Some(ids);
            } else if let Some(class) = term.strip_prefix("class:") {
                sel.class = Some(match class {
                    "constrained" => DeviceClass::ConstrainedNode,
                    "infrastructure" => DeviceClass::Infrastructure,
                    "edge" => DeviceClass::EdgeCompute,
                    other => return Err(SelectorError::UnknownClass(other.to_owned())),
                });
            } else if let Some(sensor) = term.strip_prefix("with:") {
                if sensor.is_empty() {
                    return Err(SelectorError::UnknownTerm(term.to_owned()));
                }
                sel.with_sensor = Some(SensorKind::new(sensor));
            } else {
                return Err(SelectorError::UnknownTerm(term.to_owned()));
            }
        }
        if terms == 0 {
            return Err(SelectorError::Empty);
        }
        Ok(sel)
    }

    /// Canonical text form; `parse(canonical(x)) == x`.
    pub fn canonical(&self) -> String {
        let mut parts = Vec::new();
        if self.all {
            parts.push("all".to_owned());
        }
        if let Some(ids) = &self.ids {
            let list: Vec<&str> = ids.iter().map(|d| d.as_str()).collect();
            parts.push(format!("id:{}", list.join(",")));
        }
        if let Some(class) = self.class {
            parts.push(format!(
                "class:{}",
                match class {
                    DeviceClass::ConstrainedNode => "constrained",
                    DeviceClass::Infrastructure => "infrastructure",
                    DeviceClass::EdgeCompute => "edge",
                }
            ));
        }
        if let Some(s) = &self.with_sensor {
            parts.push(format!("with:{s}"));
        }
        parts.join(" ")
    }

    /// All matching device ids, in deterministic (sorted) order.
    pub fn resolve(&self, topology: &Topology) -> Vec<DeviceId> {
        topology
            .devices
            .iter()
            .filter(|(id, dev)| {
                if let Some(ids) = &self.ids {
                    if !ids.contains(id) {
                        return false;
                    }
                } else if !self.all && self.class.is_none() && self.with_sensor.is_none() {
                    return false;
                }
                if let Some(class) = self.class {
                    if dev.class != class {
                        return false;
                    }
                }
                if let Some(sensor) = &self.with_sensor {
                    if !dev.sensors.contains(sensor) {
                        return false;
                    }
                }
                true
            })
            .map(|(id, _)| id.clone())
            .collect()
    }
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl Serialize for Selector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Selector::parse(&s).map_err(serde::de::Error::custom)
    }
}
