//! Simulation state and the event engine.
//!
//! Energy is tracked in integer microjoules so debits are exact and the
//! drain arithmetic is reproducible to the last acquisition. The event queue
//! orders work by (tick, insertion sequence number), which is what makes the
//! whole run replayable.

use super::signal;
use super::topology::{Comparator, DeviceClass, Topology, TopologyDelta};
use super::SimError;
use crate::ids::{ActuatorKind, DeviceId, SensorKind, Tick};
use crate::rng::{domain, stream};
use crate::scenario::{ScenarioConfig, SignalConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

/// A compressed periodic tick set: sorted offsets repeating every
/// `hyperperiod` ticks. This is the wire form of a merged schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickSet {
    pub offsets: Vec<Tick>,
    pub hyperperiod: Tick,
}

impl TickSet {
    pub fn new(mut offsets: Vec<Tick>, hyperperiod: Tick) -> Self {
        offsets.sort_unstable();
        offsets.dedup();
        debug_assert!(hyperperiod >= 1);
        debug_assert!(offsets.iter().all(|&o| o < hyperperiod));
        Self {
            offsets,
            hyperperiod,
        }
    }

    pub fn contains(&self, tick: Tick) -> bool {
        self.offsets
            .binary_search(&(tick % self.hyperperiod))
            .is_ok()
    }

    /// All ticks of the set inside `[start, end)`, ascending.
    pub fn occurrences_in(&self, start: Tick, end: Tick) -> Vec<Tick> {
        let mut out = Vec::new();
        if start >= end || self.offsets.is_empty() {
            return out;
        }
        let mut base = (start / self.hyperperiod) * self.hyperperiod;
        while base < end {
            for &o in &self.offsets {
                let t = base + o;
                if t >= end {
                    break;
                }
                if t >= start {
                    out.push(t);
                }
            }
            base += self.hyperperiod;
        }
        out
    }

    pub fn len_per_hyperperiod(&self) -> usize {
        self.offsets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub comparator: Comparator,
    pub value: f64,
}

impl ThresholdSpec {
    pub fn holds(&self, sample: f64) -> bool {
        self.comparator.holds(sample, self.value)
    }
}

/// Fine-grained node commands executed by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Instruction {
    Collect {
        node: DeviceId,
        sensor: SensorKind,
    },
    SetSchedule {
        node: DeviceId,
        sensor: SensorKind,
        ticks: TickSet,
    },
    /// Replaces the full pushed-threshold set for (node, sensor); the node
    /// evaluates every entry and tags which fired.
    SetThreshold {
        node: DeviceId,
        sensor: SensorKind,
        thresholds: Vec<ThresholdSpec>,
    },
    Control {
        node: DeviceId,
        actuator: ActuatorKind,
        value: f64,
    },
    ComputeTask {
        node: DeviceId,
        duration_ticks: Tick,
    },
    Restart {
        node: DeviceId,
    },
    Reconfigure {
        delta: TopologyDelta,
    },
    ScanChannels {
        gateway: DeviceId,
    },
}

impl Instruction {
    pub fn target(&self) -> Option<&DeviceId> {
        match self {
            Instruction::Collect { node, .. }
            | Instruction::SetSchedule { node, .. }
            | Instruction::SetThreshold { node, .. }
            | Instruction::Control { node, .. }
            | Instruction::ComputeTask { node, .. }
            | Instruction::Restart { node } => Some(node),
            Instruction::ScanChannels { gateway } => Some(gateway),
            Instruction::Reconfigure {
                delta: TopologyDelta::Reparent { device, .. },
            } => Some(device),
        }
    }
}

/// One sensor sample. `value` is a pure function of
/// (scenario seed, node, sensor, tick) and can be replayed offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub node: DeviceId,
    pub sensor: SensorKind,
    pub tick: Tick,
    pub value: f64,
    /// The installed thresholds that held for this sample.
    pub fired: Vec<ThresholdSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmitOutcome {
    Delivered,
    Lost(usize),
}

impl TransmitOutcome {
    pub fn is_delivered(self) -> bool {
        matches!(self, TransmitOutcome::Delivered)
    }
}

/// Append-only log record; exported as one NDJSON line per event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: Tick,
    pub device: Option<DeviceId>,
    #[serde(flatten)]
    pub detail: EventDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventDetail {
    Reading {
        sensor: SensorKind,
        value: f64,
        fired: Vec<ThresholdSpec>,
    },
    TransmitDelivered {
        hops: usize,
    },
    TransmitLost {
        hop: usize,
        at: DeviceId,
    },
    /// A reading arrived at the gateway for a scheduled demand tick.
    Delivery {
        sensor: SensorKind,
        demand_tick: Tick,
        value: f64,
        fired: Vec<ThresholdSpec>,
        tier: u8,
    },
    ScheduleInstalled {
        sensor: SensorKind,
        ticks: usize,
        hyperperiod: Tick,
    },
    ThresholdsInstalled {
        sensor: SensorKind,
        count: usize,
    },
    ActuatorSet {
        actuator: ActuatorKind,
        value: f64,
    },
    ComputeStarted {
        start: Tick,
        duration: Tick,
    },
    ComputeDone,
    Restarted,
    RestartFailed,
    NodeDead,
    Reconfigured {
        new_parent: DeviceId,
    },
    ChannelSwitched {
        channel: usize,
    },
    FieldReplaced,
    InstructionFailed {
        error: String,
    },
    StarvationAlarm {
        tier: u8,
        deferrals: u64,
    },
    MaintenancePosted {
        action: String,
        level: u8,
        cost: f64,
    },
}

#[derive(Debug, Clone)]
struct NodeEnergy {
    remaining_uj: u64,
    paid_until: Tick,
    alive: bool,
}

#[derive(Debug, Clone, Copy)]
struct EnergyCosts {
    per_acquisition_uj: u64,
    per_transmit_hop_uj: u64,
    idle_per_tick_uj: u64,
    default_budget_uj: u64,
}

fn joules_to_uj(j: f64) -> u64 {
    (j * 1e6).round().max(0.0) as u64
}

#[derive(Debug, Clone)]
enum WorkItem {
    Instr(Box<Instruction>),
    ComputeDone { node: DeviceId },
}

#[derive(Debug, Clone)]
struct Queued {
    tick: Tick,
    seq: u64,
    work: WorkItem,
}

// Queue order is (time, insertion sequence); seq is unique, so this total
// order never inspects the work payload.
impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tick, self.seq).cmp(&(other.tick, other.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// The full simulation state: one logical thread of execution. Transferable
/// between threads, never mutated concurrently.
#[derive(Debug, Clone)]
pub struct SimState {
    topology: Topology,
    tick: Tick,
    seed: u64,
    interference: Vec<f64>,
    loss_rates: Vec<f64>,
    active_channel: usize,
    energy: BTreeMap<DeviceId, NodeEnergy>,
    costs: EnergyCosts,
    signals: BTreeMap<SensorKind, SignalConfig>,
    schedules: BTreeMap<(DeviceId, SensorKind), TickSet>,
    thresholds: BTreeMap<(DeviceId, SensorKind), Vec<ThresholdSpec>>,
    actuator_state: BTreeMap<(DeviceId, ActuatorKind), f64>,
    compute_busy_until: BTreeMap<DeviceId, Tick>,
    queue: BinaryHeap<Reverse<Queued>>,
    next_seq: u64,
    log: Vec<EventRecord>,
    rng_transmit: ChaCha8Rng,
}

impl SimState {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let topology = super::topology::build_topology(&cfg.devices, cfg.seed)?;
        Self::with_topology(cfg, topology)
    }

    pub fn with_topology(cfg: &ScenarioConfig, topology: Topology) -> Result<Self, SimError> {
        let interference = match &cfg.channels.interference {
            Some(v) => v.clone(),
            None => {
                let mut rng = stream(cfg.seed, domain::CHANNELS);
                (0..cfg.channels.count).map(|_| rng.gen::<f64>()).collect()
            }
        };
        let costs = EnergyCosts {
            per_acquisition_uj: joules_to_uj(cfg.energy.per_acquisition_j),
            per_transmit_hop_uj: joules_to_uj(cfg.energy.per_transmit_hop_j),
            idle_per_tick_uj: joules_to_uj(cfg.energy.idle_per_tick_j),
            default_budget_uj: joules_to_uj(cfg.energy.budget_j),
        };
        let mut energy = BTreeMap::new();
        for id in topology.ids_of_class(DeviceClass::ConstrainedNode) {
            let budget = cfg
                .energy
                .overrides
                .get(id.as_str())
                .map(|j| joules_to_uj(*j))
                .unwrap_or(costs.default_budget_uj);
            energy.insert(
                id.clone(),
                NodeEnergy {
                    remaining_uj: budget,
                    paid_until: 0,
                    alive: budget > 0,
                },
            );
        }
        let signals = cfg
            .sensors
            .iter()
            .map(|(k, v)| (SensorKind::new(k.clone()), v.clone()))
            .collect();
        Ok(Self {
            topology,
            tick: 0,
            seed: cfg.seed,
            interference,
            loss_rates: cfg.channels.effective_loss_rates(),
            active_channel: 0,
            energy,
            costs,
            signals,
            schedules: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            actuator_state: BTreeMap::new(),
            compute_busy_until: BTreeMap::new(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            log: Vec::new(),
            rng_transmit: stream(cfg.seed, domain::TRANSMIT),
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn active_channel(&self) -> usize {
        self.active_channel
    }

    pub fn channel_interference(&self) -> &[f64] {
        &self.interference
    }

    pub fn current_loss_rate(&self) -> f64 {
        self.loss_rates[self.active_channel]
    }

    pub fn log(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn schedules(&self) -> &BTreeMap<(DeviceId, SensorKind), TickSet> {
        &self.schedules
    }

    pub fn installed_thresholds(&self, node: &DeviceId, sensor: &SensorKind) -> &[ThresholdSpec] {
        self.thresholds
            .get(&(node.clone(), sensor.clone()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn actuator_value(&self, node: &DeviceId, actuator: &ActuatorKind) -> Option<f64> {
        self.actuator_state
            .get(&(node.clone(), actuator.clone()))
            .copied()
    }

    pub fn is_alive(&self, node: &DeviceId) -> bool {
        self.energy.get(node).map(|e| e.alive).unwrap_or(true)
    }

    /// Append an engine-level record to the unified event log.
    pub fn log_event(&mut self, device: Option<DeviceId>, detail: EventDetail) {
        self.log.push(EventRecord {
            tick: self.tick,
            device,
            detail,
        });
    }

    /// Queue an instruction for execution at `tick`. Simultaneous events run
    /// in insertion order.
    pub fn schedule_at(&mut self, tick: Tick, instruction: Instruction) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued {
            tick,
            seq,
            work: WorkItem::Instr(Box::new(instruction)),
        }));
    }

    /// Process all queued events with time <= `until` in (time, sequence)
    /// order, then advance the clock to `until`. Failures of queued
    /// instructions are logged, not raised. Returns the records emitted
    /// during this step.
    pub fn step(&mut self, until: Tick) -> Vec<EventRecord> {
        let mark = self.log.len();
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.tick > until {
                break;
            }
            let Reverse(item) = self.queue.pop().unwrap();
            self.tick = self.tick.max(item.tick);
            match item.work {
                WorkItem::Instr(instr) => {
                    let device = instr.target().cloned();
                    if let Err(e) = self.execute_instruction(&instr) {
                        self.log_event(
                            device,
                            EventDetail::InstructionFailed {
                                error: e.to_string(),
                            },
                        );
                    }
                }
                WorkItem::ComputeDone { node } => {
                    self.log_event(Some(node), EventDetail::ComputeDone);
                }
            }
        }
        self.tick = self.tick.max(until);
        self.log[mark..].to_vec()
    }

    /// Execute one instruction immediately at the current tick.
    pub fn execute_instruction(
        &mut self,
        instruction: &Instruction,
    ) -> Result<Vec<EventRecord>, SimError> {
        let mark = self.log.len();
        match instruction {
            Instruction::Collect { node, sensor } => {
                self.collect(node, sensor)?;
            }
            Instruction::SetSchedule {
                node,
                sensor,
                ticks,
            } => {
                self.set_schedule(node, sensor, ticks.clone())?;
            }
            Instruction::SetThreshold {
                node,
                sensor,
                thresholds,
            } => {
                self.set_thresholds(node, sensor, thresholds.clone())?;
            }
            Instruction::Control {
                node,
                actuator,
                value,
            } => {
                self.control(node, actuator, *value)?;
            }
            Instruction::ComputeTask {
                node,
                duration_ticks,
            } => {
                self.compute_task(node, *duration_ticks)?;
            }
            Instruction::Restart { node } => {
                self.restart(node)?;
            }
            Instruction::Reconfigure { delta } => {
                self.topology.apply_delta(delta)?;
                let TopologyDelta::Reparent { device, new_parent } = delta;
                self.log_event(
                    Some(device.clone()),
                    EventDetail::Reconfigured {
                        new_parent: new_parent.clone(),
                    },
                );
            }
            Instruction::ScanChannels { gateway } => {
                if !self.topology.is_gateway(gateway) {
                    self.topology.device(gateway)?;
                    return Err(SimError::InvalidTarget(format!(
                        "{gateway} is not a gateway"
                    )));
                }
                let channel = self.scan_channels();
                self.active_channel = channel;
                self.log_event(
                    Some(gateway.clone()),
                    EventDetail::ChannelSwitched { channel },
                );
            }
        }
        Ok(self.log[mark..].to_vec())
    }

    /// Index of the channel with the least interference; ties break to the
    /// lowest index.
    pub fn scan_channels(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.interference.iter().enumerate() {
            if *v < self.interference[best] {
                best = i;
            }
        }
        best
    }

    /// Take one sample on (node, sensor): debits acquisition energy on
    /// constrained nodes, evaluates installed thresholds, logs a Reading.
    pub fn collect(&mut self, node: &DeviceId, sensor: &SensorKind) -> Result<Reading, SimError> {
        let dev = self.topology.device(node)?;
        if !dev.sensors.contains(sensor) {
            return Err(SimError::InvalidTarget(format!(
                "{node} has no sensor {sensor}"
            )));
        }
        let is_constrained = dev.class == DeviceClass::ConstrainedNode;
        if is_constrained {
            self.fold_idle(node);
            if !self.energy[node].alive {
                return Err(SimError::DeadNode(node.clone()));
            }
        }
        let sig = self.signals.get(sensor).cloned().unwrap_or_default();
        let value = signal::value(&sig, self.seed, node, sensor, self.tick);
        if is_constrained {
            self.debit(node, self.costs.per_acquisition_uj);
        }
        let fired: Vec<ThresholdSpec> = self
            .installed_thresholds(node, sensor)
            .iter()
            .filter(|t| t.holds(value))
            .copied()
            .collect();
        let reading = Reading {
            node: node.clone(),
            sensor: sensor.clone(),
            tick: self.tick,
            value,
            fired: fired.clone(),
        };
        self.log_event(
            Some(node.clone()),
            EventDetail::Reading {
                sensor: sensor.clone(),
                value,
                fired,
            },
        );
        Ok(reading)
    }

    /// Send a payload along `path` (a child-to-parent chain ending at a
    /// gateway). Each hop succeeds independently with probability
    /// 1 - lossRate(activeChannel); every sending device pays the hop energy,
    /// relays included.
    pub fn transmit(&mut self, path: &[DeviceId]) -> Result<TransmitOutcome, SimError> {
        if path.is_empty() {
            return Err(SimError::DisconnectedPath(0));
        }
        for (i, pair) in path.windows(2).enumerate() {
            let child = self.topology.device(&pair[0])?;
            if child.parent.as_ref() != Some(&pair[1]) {
                return Err(SimError::DisconnectedPath(i));
            }
        }
        let loss = self.current_loss_rate();
        for hop in 0..path.len().saturating_sub(1) {
            let sender = path[hop].clone();
            if self.energy.contains_key(&sender) {
                self.fold_idle(&sender);
                if !self.energy[&sender].alive {
                    self.log_event(
                        Some(path[0].clone()),
                        EventDetail::TransmitLost { hop, at: sender },
                    );
                    return Ok(TransmitOutcome::Lost(hop));
                }
                self.debit(&sender, self.costs.per_transmit_hop_uj);
            }
            let delivered = if loss <= 0.0 {
                true
            } else if loss >= 1.0 {
                false
            } else {
                self.rng_transmit.gen::<f64>() >= loss
            };
            if !delivered {
                self.log_event(
                    Some(path[0].clone()),
                    EventDetail::TransmitLost { hop, at: sender },
                );
                return Ok(TransmitOutcome::Lost(hop));
            }
        }
        self.log_event(
            Some(path[0].clone()),
            EventDetail::TransmitDelivered {
                hops: path.len() - 1,
            },
        );
        Ok(TransmitOutcome::Delivered)
    }

    /// Joules remaining for a constrained node, including idle drain accrued
    /// up to the current tick.
    pub fn remaining_energy(&self, node: &DeviceId) -> Result<f64, SimError> {
        let dev = self.topology.device(node)?;
        if dev.class != DeviceClass::ConstrainedNode {
            return Err(SimError::InvalidTarget(format!(
                "{node} has no energy budget"
            )));
        }
        let e = &self.energy[node];
        let pending_idle = if e.alive {
            (self.tick - e.paid_until) * self.costs.idle_per_tick_uj
        } else {
            0
        };
        Ok(e.remaining_uj.saturating_sub(pending_idle) as f64 / 1e6)
    }

    fn set_schedule(
        &mut self,
        node: &DeviceId,
        sensor: &SensorKind,
        ticks: TickSet,
    ) -> Result<(), SimError> {
        let dev = self.topology.device(node)?;
        if !dev.sensors.contains(sensor) {
            return Err(SimError::InvalidTarget(format!(
                "{node} has no sensor {sensor}"
            )));
        }
        self.log_event(
            Some(node.clone()),
            EventDetail::ScheduleInstalled {
                sensor: sensor.clone(),
                ticks: ticks.len_per_hyperperiod(),
                hyperperiod: ticks.hyperperiod,
            },
        );
        self.schedules.insert((node.clone(), sensor.clone()), ticks);
        Ok(())
    }

    fn set_thresholds(
        &mut self,
        node: &DeviceId,
        sensor: &SensorKind,
        thresholds: Vec<ThresholdSpec>,
    ) -> Result<(), SimError> {
        let dev = self.topology.device(node)?;
        if !dev.sensors.contains(sensor) {
            return Err(SimError::InvalidTarget(format!(
                "{node} has no sensor {sensor}"
            )));
        }
        self.log_event(
            Some(node.clone()),
            EventDetail::ThresholdsInstalled {
                sensor: sensor.clone(),
                count: thresholds.len(),
            },
        );
        self.thresholds
            .insert((node.clone(), sensor.clone()), thresholds);
        Ok(())
    }

    fn control(
        &mut self,
        node: &DeviceId,
        actuator: &ActuatorKind,
        value: f64,
    ) -> Result<(), SimError> {
        let dev = self.topology.device(node)?;
        if !dev.actuators.contains(actuator) {
            return Err(SimError::InvalidTarget(format!(
                "{node} has no actuator {actuator}"
            )));
        }
        if dev.class == DeviceClass::ConstrainedNode {
            self.fold_idle(node);
            if !self.energy[node].alive {
                return Err(SimError::DeadNode(node.clone()));
            }
            self.debit(node, self.costs.per_acquisition_uj);
        }
        self.actuator_state
            .insert((node.clone(), actuator.clone()), value);
        self.log_event(
            Some(node.clone()),
            EventDetail::ActuatorSet {
                actuator: actuator.clone(),
                value,
            },
        );
        Ok(())
    }

    fn compute_task(&mut self, node: &DeviceId, duration: Tick) -> Result<(), SimError> {
        let dev = self.topology.device(node)?;
        if dev.class != DeviceClass::EdgeCompute {
            return Err(SimError::InvalidTarget(format!(
                "compute task on non-edge device {node}"
            )));
        }
        let busy = self.compute_busy_until.get(node).copied().unwrap_or(0);
        let start = self.tick.max(busy);
        let done = start + duration;
        self.compute_busy_until.insert(node.clone(), done);
        self.log_event(
            Some(node.clone()),
            EventDetail::ComputeStarted { start, duration },
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued {
            tick: done,
            seq,
            work: WorkItem::ComputeDone { node: node.clone() },
        }));
        Ok(())
    }

    /// Clear the node's installed schedules and thresholds and bring it back
    /// up. Succeeds only while the node still has energy; a drained node
    /// stays dead (field replacement is the way back).
    pub fn restart(&mut self, node: &DeviceId) -> Result<bool, SimError> {
        self.topology.device(node)?;
        self.clear_node_state(node);
        if let Some(e) = self.energy.get(node) {
            let has_energy = e.remaining_uj > 0;
            self.fold_idle(node);
            let e = self.energy.get_mut(node).unwrap();
            if has_energy && e.remaining_uj > 0 {
                e.alive = true;
                self.log_event(Some(node.clone()), EventDetail::Restarted);
                Ok(true)
            } else {
                self.log_event(Some(node.clone()), EventDetail::RestartFailed);
                Ok(false)
            }
        } else {
            self.log_event(Some(node.clone()), EventDetail::Restarted);
            Ok(true)
        }
    }

    /// The monitor's privileged write: swap in fresh hardware. Resets the
    /// energy budget to the standard full budget and clears node state.
    pub fn field_replace(&mut self, node: &DeviceId) -> Result<(), SimError> {
        let dev = self.topology.device(node)?;
        if dev.class != DeviceClass::ConstrainedNode {
            return Err(SimError::InvalidTarget(format!(
                "field replace on non-constrained device {node}"
            )));
        }
        self.clear_node_state(node);
        let tick = self.tick;
        let budget = self.costs.default_budget_uj;
        let e = self.energy.get_mut(node).unwrap();
        e.remaining_uj = budget;
        e.paid_until = tick;
        e.alive = budget > 0;
        self.log_event(Some(node.clone()), EventDetail::FieldReplaced);
        Ok(())
    }

    fn clear_node_state(&mut self, node: &DeviceId) {
        self.schedules.retain(|(n, _), _| n != node);
        self.thresholds.retain(|(n, _), _| n != node);
    }

    fn fold_idle(&mut self, node: &DeviceId) {
        let idle = self.costs.idle_per_tick_uj;
        let tick = self.tick;
        let mut died = false;
        if let Some(e) = self.energy.get_mut(node) {
            if e.alive {
                let drain = (tick - e.paid_until).saturating_mul(idle);
                e.remaining_uj = e.remaining_uj.saturating_sub(drain);
                if e.remaining_uj == 0 {
                    e.alive = false;
                    died = true;
                }
            }
            e.paid_until = tick;
        }
        if died {
            self.log_event(Some(node.clone()), EventDetail::NodeDead);
        }
    }

    fn debit(&mut self, node: &DeviceId, amount_uj: u64) {
        let mut died = false;
        if let Some(e) = self.energy.get_mut(node) {
            e.remaining_uj = e.remaining_uj.saturating_sub(amount_uj);
            if e.alive && e.remaining_uj == 0 {
                e.alive = false;
                died = true;
            }
        }
        if died {
            self.log_event(Some(node.clone()), EventDetail::NodeDead);
        }
    }
}
