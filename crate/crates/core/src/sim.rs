//! Deterministic discrete-event simulation of the star-variant sensor
//! network: topology, instruction execution, sensor sampling, per-hop packet
//! delivery, energy accounting, and channel scanning.
//!
//! A [`state::SimState`] is a single logical thread of execution; identical
//! (scenario, seed, instruction stream) inputs produce bit-identical event
//! logs. All randomness comes from seeded sub-streams (see [`crate::rng`]).

pub mod signal;
pub mod state;
pub mod topology;

pub use state::{
    EventDetail, EventRecord, Instruction, Reading, SimState, ThresholdSpec, TickSet,
    TransmitOutcome,
};
pub use topology::{build_topology, Comparator, Device, DeviceClass, Topology, TopologyDelta};

use crate::ids::DeviceId;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("invalid instruction target: {0}")]
    InvalidTarget(String),
    #[error("device {0} is dead (energy exhausted)")]
    DeadNode(DeviceId),
    #[error("path is not a connected parent chain at hop {0}")]
    DisconnectedPath(usize),
    #[error("nodes configured but no gateway")]
    ZeroGateways,
    #[error("invalid device count: {0}")]
    InvalidCount(String),
    #[error("reconfiguration would break the forest: {0}")]
    ForestViolation(String),
}
