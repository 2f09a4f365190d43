//! Network topology: a forest rooted at sink gateways, with routers and
//! edge-compute devices in the middle and constrained nodes at the leaves.
//! Constrained nodes may parent other constrained nodes (multi-hop relays),
//! which is what concentrates transmit load near the sink.

use super::SimError;
use crate::ids::{ActuatorKind, DeviceId, SensorKind};
use crate::rng::{domain, stream};
use crate::scenario::DeviceConfig;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    /// Energy-unconstrained compute device for edge tasks.
    EdgeCompute,
    /// Sink gateway or router; energy-unconstrained.
    Infrastructure,
    /// Energy-restricted low-power sensing node.
    ConstrainedNode,
}

/// Comparison operator used by thresholds and control conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub class: DeviceClass,
    pub parent: Option<DeviceId>,
    pub sensors: BTreeSet<SensorKind>,
    pub actuators: BTreeSet<ActuatorKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub devices: BTreeMap<DeviceId, Device>,
    pub gateways: BTreeSet<DeviceId>,
}

/// A topology change applied by a Reconfigure instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TopologyDelta {
    Reparent {
        device: DeviceId,
        new_parent: DeviceId,
    },
}

impl Topology {
    pub fn device(&self, id: &DeviceId) -> Result<&Device, SimError> {
        self.devices
            .get(id)
            .ok_or_else(|| SimError::UnknownDevice(id.clone()))
    }

    pub fn is_gateway(&self, id: &DeviceId) -> bool {
        self.gateways.contains(id)
    }

    /// The parent chain from `id` (inclusive) up to its gateway (inclusive).
    /// Gateways yield a single-element path.
    pub fn path_to_gateway(&self, id: &DeviceId) -> Result<Vec<DeviceId>, SimError> {
        let mut path = vec![id.clone()];
        let mut cur = id.clone();
        for hop in 0..self.devices.len() + 1 {
            if self.is_gateway(&cur) {
                return Ok(path);
            }
            match &self.device(&cur)?.parent {
                Some(p) => {
                    path.push(p.clone());
                    cur = p.clone();
                }
                None => return Err(SimError::DisconnectedPath(hop)),
            }
        }
        Err(SimError::ForestViolation("cycle in parent links".into()))
    }

    pub fn ids_of_class(&self, class: DeviceClass) -> impl Iterator<Item = &DeviceId> {
        self.devices
            .iter()
            .filter(move |(_, d)| d.class == class)
            .map(|(id, _)| id)
    }

    /// Every parent link resolves, roots are exactly the gateways, no cycles.
    pub fn validate_forest(&self) -> Result<(), SimError> {
        for (id, dev) in &self.devices {
            match &dev.parent {
                None => {
                    if !self.is_gateway(id) {
                        return Err(SimError::ForestViolation(format!(
                            "{id} has no parent but is not a gateway"
                        )));
                    }
                }
                Some(p) => {
                    if !self.devices.contains_key(p) {
                        return Err(SimError::ForestViolation(format!(
                            "{id} has unknown parent {p}"
                        )));
                    }
                    if self.is_gateway(id) {
                        return Err(SimError::ForestViolation(format!(
                            "gateway {id} must be a root"
                        )));
                    }
                }
            }
            self.path_to_gateway(id)?;
        }
        for g in &self.gateways {
            if !self.devices.contains_key(g) {
                return Err(SimError::ForestViolation(format!("unknown gateway {g}")));
            }
        }
        Ok(())
    }

    /// Apply a delta, preserving the forest invariant; on error the topology
    /// is unchanged.
    pub fn apply_delta(&mut self, delta: &TopologyDelta) -> Result<(), SimError> {
        match delta {
            TopologyDelta::Reparent { device, new_parent } => {
                self.device(new_parent)?;
                let dev = self.device(device)?;
                if dev.parent.is_none() {
                    return Err(SimError::ForestViolation(format!(
                        "{device} is a root and cannot be reparented"
                    )));
                }
                // Walking up from the new parent must not pass through the
                // device being moved, or a cycle forms.
                let mut cur = new_parent.clone();
                loop {
                    if &cur == device {
                        return Err(SimError::ForestViolation(format!(
                            "{new_parent} is a descendant of {device}"
                        )));
                    }
                    match &self.device(&cur)?.parent {
                        Some(p) => cur = p.clone(),
                        None => break,
                    }
                }
                self.devices.get_mut(device).unwrap().parent = Some(new_parent.clone());
                self.path_to_gateway(device)?;
                Ok(())
            }
        }
    }
}

/// Build the scenario topology. Deterministic for a given seed: gateways,
/// routers and edge devices are laid out round-robin; constrained nodes pick
/// parents from a seeded stream, a fraction of them chaining behind other
/// constrained nodes as relays.
pub fn build_topology(cfg: &DeviceConfig, seed: u64) -> Result<Topology, SimError> {
    let any_nodes = cfg.constrained > 0 || cfg.edge > 0;
    if cfg.gateways == 0 && (any_nodes || cfg.infrastructure > 0) {
        return Err(SimError::ZeroGateways);
    }
    if cfg.gateways > cfg.infrastructure {
        return Err(SimError::InvalidCount(format!(
            "gateways ({}) exceed infrastructure devices ({})",
            cfg.gateways, cfg.infrastructure
        )));
    }
    if !(0.0..=1.0).contains(&cfg.relay_fraction) {
        return Err(SimError::InvalidCount(format!(
            "relay_fraction {} outside [0,1]",
            cfg.relay_fraction
        )));
    }

    let mut devices = BTreeMap::new();
    let mut gateways = BTreeSet::new();

    let gateway_ids: Vec<DeviceId> = (0..cfg.gateways)
        .map(|i| DeviceId::new(format!("g{i}")))
        .collect();
    for id in &gateway_ids {
        gateways.insert(id.clone());
        devices.insert(
            id.clone(),
            Device {
                class: DeviceClass::Infrastructure,
                parent: None,
                sensors: BTreeSet::new(),
                actuators: BTreeSet::new(),
            },
        );
    }

    let router_count = cfg.infrastructure - cfg.gateways;
    let router_ids: Vec<DeviceId> = (0..router_count)
        .map(|i| DeviceId::new(format!("r{i}")))
        .collect();
    for (i, id) in router_ids.iter().enumerate() {
        devices.insert(
            id.clone(),
            Device {
                class: DeviceClass::Infrastructure,
                parent: Some(gateway_ids[i % gateway_ids.len()].clone()),
                sensors: BTreeSet::new(),
                actuators: BTreeSet::new(),
            },
        );
    }

    for i in 0..cfg.edge {
        devices.insert(
            DeviceId::new(format!("e{i}")),
            Device {
                class: DeviceClass::EdgeCompute,
                parent: Some(gateway_ids[i as usize % gateway_ids.len()].clone()),
                sensors: BTreeSet::new(),
                actuators: cfg.edge_actuators.iter().cloned().collect(),
            },
        );
    }

    // Infrastructure attachment points for constrained nodes.
    let infra_pool: Vec<DeviceId> = if router_ids.is_empty() {
        gateway_ids.clone()
    } else {
        router_ids.clone()
    };
    let mut rng = stream(seed, domain::TOPOLOGY);
    // (id, relay chain length) of constrained nodes placed so far that can
    // still accept children.
    let mut relay_candidates: Vec<(DeviceId, u32)> = Vec::new();
    for i in 0..cfg.constrained {
        let id = DeviceId::new(format!("n{i}"));
        let make_relay_child = cfg.max_relay_depth > 0
            && !relay_candidates.is_empty()
            && rng.gen::<f64>() < cfg.relay_fraction;
        let (parent, chain) = if make_relay_child {
            let (p, parent_chain) =
                relay_candidates[rng.gen_range(0..relay_candidates.len())].clone();
            (p, parent_chain + 1)
        } else {
            (infra_pool[rng.gen_range(0..infra_pool.len())].clone(), 0)
        };
        if chain < cfg.max_relay_depth {
            relay_candidates.push((id.clone(), chain));
        }
        devices.insert(
            id,
            Device {
                class: DeviceClass::ConstrainedNode,
                parent: Some(parent),
                sensors: cfg.constrained_sensors.iter().cloned().collect(),
                actuators: cfg.constrained_actuators.iter().cloned().collect(),
            },
        );
    }

    let topo = Topology { devices, gateways };
    topo.validate_forest()?;
    Ok(topo)
}
