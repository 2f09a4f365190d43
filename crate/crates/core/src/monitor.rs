//! The sniffer: build the expected packet timeline from the middleware's
//! dispatch log, diff it against what the network actually delivered, raise
//! anomalies, and pick maintenance actions — restart first, field replacement
//! only when a restart failed to clear the silence.

use crate::ids::{DeviceId, SensorKind, Tick};
use crate::sim::Instruction;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MonitorError {
    #[error("expected window {expected:?} does not match observed window {observed:?}")]
    WindowMismatch {
        expected: (Tick, Tick),
        observed: (Tick, Tick),
    },
}

/// Expected delivery ticks per (node, sensor) over a window: exactly the
/// union-schedule ticks the middleware installed, nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpectedTimeline {
    pub window: (Tick, Tick),
    pub per_key: BTreeMap<(DeviceId, SensorKind), Vec<Tick>>,
}

/// Derive the expected timeline from a dispatch log (an emitted instruction
/// stream). A later SetSchedule for the same key replaces the earlier one,
/// mirroring the idempotent re-emission semantics.
pub fn expected_behavior(dispatch_log: &[Instruction], window: (Tick, Tick)) -> ExpectedTimeline {
    let mut schedules = BTreeMap::new();
    for instr in dispatch_log {
        if let Instruction::SetSchedule {
            node,
            sensor,
            ticks,
        } = instr
        {
            schedules.insert((node.clone(), sensor.clone()), ticks.clone());
        }
    }
    let per_key = schedules
        .into_iter()
        .map(|(key, ticks)| (key, ticks.occurrences_in(window.0, window.1)))
        .filter(|(_, ticks)| !ticks.is_empty())
        .collect();
    ExpectedTimeline { window, per_key }
}

/// What the network was seen to deliver, keyed by the demand tick served.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservedLog {
    pub window: (Tick, Tick),
    pub deliveries: BTreeSet<(DeviceId, SensorKind, Tick)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub node: DeviceId,
    pub first_tick: Tick,
    #[serde(flatten)]
    pub kind: AnomalyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalyKind {
    /// The node missed this many consecutive expected deliveries.
    NodeSilent {
        consecutive_misses: u32,
        missed_ticks: Vec<Tick>,
    },
    /// Windowed miss rate above the tolerated loss threshold while the node
    /// still delivers intermittently.
    ExcessLoss {
        rate: f64,
        expected: u64,
        missed: u64,
    },
    /// A delivery at a tick no schedule expected.
    UnexpectedPacket { sensor: SensorKind },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorThresholds {
    pub consecutive_miss_threshold: u32,
    pub loss_window_ticks: Tick,
    pub excess_loss_threshold: f64,
    /// Minimum expected deliveries in the loss window before an ExcessLoss
    /// verdict is meaningful.
    pub min_loss_samples: u64,
}

impl Default for MonitorThresholds {
    fn default() -> Self {
        Self {
            consecutive_miss_threshold: 3,
            loss_window_ticks: 36_000,
            excess_loss_threshold: 0.10,
            min_loss_samples: 10,
        }
    }
}

/// Stateless diff over one window. For continuous monitoring across
/// consecutive windows use [`MonitorEngine`], which carries miss counters
/// over window boundaries.
pub fn diff(
    expected: &ExpectedTimeline,
    observed: &ObservedLog,
    thresholds: &MonitorThresholds,
) -> Result<Vec<Anomaly>, MonitorError> {
    if expected.window != observed.window {
        return Err(MonitorError::WindowMismatch {
            expected: expected.window,
            observed: observed.window,
        });
    }
    let mut engine = MonitorEngine::new(*thresholds);
    Ok(engine.observe_window(expected, observed))
}

#[derive(Debug, Clone, Default)]
struct NodeMissState {
    consecutive: u32,
    pending_missed: Vec<Tick>,
    /// A NodeSilent was raised for the ongoing silence; cleared on delivery
    /// or by an explicit episode reset after a maintenance action.
    episode_raised: bool,
    /// Rolling (tick, missed) outcomes for the loss-rate window.
    loss_window: Vec<(Tick, bool)>,
    loss_raised: bool,
}

/// Incremental sniffer state: feed it consecutive windows and it raises each
/// anomaly exactly once per episode.
#[derive(Debug, Clone)]
pub struct MonitorEngine {
    thresholds: MonitorThresholds,
    nodes: BTreeMap<DeviceId, NodeMissState>,
}

impl MonitorEngine {
    pub fn new(thresholds: MonitorThresholds) -> Self {
        Self {
            thresholds,
            nodes: BTreeMap::new(),
        }
    }

    /// Arm the restart confirmation for a node: the ongoing episode may
    /// raise NodeSilent again on its very next miss (counters keep
    /// accumulating), which is what lets an unsuccessful restart escalate
    /// within the confirmation window. A delivery still closes the episode.
    pub fn arm_confirmation(&mut self, node: &DeviceId) {
        if let Some(state) = self.nodes.get_mut(node) {
            state.episode_raised = false;
        }
    }

    /// Diff one window and fold its outcomes into the rolling state.
    pub fn observe_window(
        &mut self,
        expected: &ExpectedTimeline,
        observed: &ObservedLog,
    ) -> Vec<Anomaly> {
        let mut anomalies = Vec::new();

        // Per node, walk expected deliveries in tick order across sensors.
        let mut per_node: BTreeMap<&DeviceId, Vec<(Tick, &SensorKind)>> = BTreeMap::new();
        for ((node, sensor), ticks) in &expected.per_key {
            per_node
                .entry(node)
                .or_default()
                .extend(ticks.iter().map(|t| (*t, sensor)));
        }
        for (node, mut events) in per_node {
            events.sort();
            let state = self.nodes.entry(node.clone()).or_default();
            let mut silent_this_window = false;
            for (tick, sensor) in events {
                let delivered = observed
                    .deliveries
                    .contains(&(node.clone(), sensor.clone(), tick));
                state.loss_window.push((tick, !delivered));
                if delivered {
                    state.consecutive = 0;
                    state.pending_missed.clear();
                    state.episode_raised = false;
                } else {
                    state.consecutive += 1;
                    state.pending_missed.push(tick);
                    if state.consecutive >= self.thresholds.consecutive_miss_threshold
                        && !state.episode_raised
                    {
                        state.episode_raised = true;
                        silent_this_window = true;
                        anomalies.push(Anomaly {
                            node: node.clone(),
                            first_tick: tick,
                            kind: AnomalyKind::NodeSilent {
                                consecutive_misses: state.consecutive,
                                missed_ticks: state.pending_missed.clone(),
                            },
                        });
                    }
                }
            }
            // Loss rate over the rolling window; skip nodes already reported
            // silent this window, silence dominates a rate verdict.
            let horizon = expected
                .window
                .1
                .saturating_sub(self.thresholds.loss_window_ticks);
            state.loss_window.retain(|(t, _)| *t >= horizon);
            let expected_count = state.loss_window.len() as u64;
            let missed = state.loss_window.iter().filter(|(_, m)| *m).count() as u64;
            if expected_count >= self.thresholds.min_loss_samples && !silent_this_window {
                let rate = missed as f64 / expected_count as f64;
                if rate > self.thresholds.excess_loss_threshold {
                    if !state.loss_raised {
                        state.loss_raised = true;
                        anomalies.push(Anomaly {
                            node: node.clone(),
                            first_tick: state
                                .loss_window
                                .iter()
                                .find(|(_, m)| *m)
                                .map(|(t, _)| *t)
                                .unwrap_or(expected.window.0),
                            kind: AnomalyKind::ExcessLoss {
                                rate,
                                expected: expected_count,
                                missed,
                            },
                        });
                    }
                } else {
                    state.loss_raised = false;
                }
            }
        }

        // Unexpected packets: observed deliveries absent from expectations.
        for (node, sensor, tick) in &observed.deliveries {
            let expected_here = expected
                .per_key
                .get(&(node.clone(), sensor.clone()))
                .map(|ticks| ticks.binary_search(tick).is_ok())
                .unwrap_or(false);
            if !expected_here {
                anomalies.push(Anomaly {
                    node: node.clone(),
                    first_tick: *tick,
                    kind: AnomalyKind::UnexpectedPacket {
                        sensor: sensor.clone(),
                    },
                });
            }
        }

        anomalies.sort_by_key(|a| (a.first_tick, a.node.clone()));
        anomalies
    }
}

/// A concrete maintenance response. Restart posts an expenditure at level 1,
/// field replacement at level 3; a channel rescan is a recommendation with no
/// posted cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum MaintenanceAction {
    Restart { node: DeviceId },
    FieldReplace { node: DeviceId },
    ChannelRescan { node: DeviceId },
}

impl MaintenanceAction {
    pub fn cost_level(&self) -> Option<u8> {
        match self {
            MaintenanceAction::Restart { .. } => Some(1),
            MaintenanceAction::FieldReplace { .. } => Some(3),
            MaintenanceAction::ChannelRescan { .. } => None,
        }
    }

    pub fn node(&self) -> &DeviceId {
        match self {
            MaintenanceAction::Restart { node }
            | MaintenanceAction::FieldReplace { node }
            | MaintenanceAction::ChannelRescan { node } => node,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaintenanceAction::Restart { .. } => "restart",
            MaintenanceAction::FieldReplace { .. } => "field_replace",
            MaintenanceAction::ChannelRescan { .. } => "channel_rescan",
        }
    }
}

/// Per-node action history driving the escalation discipline.
#[derive(Debug, Clone, Default)]
pub struct MaintenanceHistory {
    /// Node -> (restart tick, confirmation deadline).
    restarts: BTreeMap<DeviceId, (Tick, Tick)>,
}

impl MaintenanceHistory {
    pub fn record_restart(&mut self, node: &DeviceId, tick: Tick, confirm_until: Tick) {
        self.restarts.insert(node.clone(), (tick, confirm_until));
    }

    pub fn clear(&mut self, node: &DeviceId) {
        self.restarts.remove(node);
    }

    pub fn restart_pending(&self, node: &DeviceId, now: Tick) -> bool {
        self.restarts
            .get(node)
            .map(|(_, until)| now <= *until)
            .unwrap_or(false)
    }
}

/// Choose the maintenance response for an open anomaly. The first answer to
/// silence is a restart; a recurrence within the confirmation window after a
/// restart escalates to field replacement. Excess loss with the node alive
/// points at the channel, not the hardware.
pub fn maintenance_action(
    anomaly: &Anomaly,
    history: &MaintenanceHistory,
    now: Tick,
) -> Option<MaintenanceAction> {
    match &anomaly.kind {
        AnomalyKind::NodeSilent { .. } => {
            if history.restart_pending(&anomaly.node, now) {
                Some(MaintenanceAction::FieldReplace {
                    node: anomaly.node.clone(),
                })
            } else {
                Some(MaintenanceAction::Restart {
                    node: anomaly.node.clone(),
                })
            }
        }
        AnomalyKind::ExcessLoss { .. } => Some(MaintenanceAction::ChannelRescan {
            node: anomaly.node.clone(),
        }),
        AnomalyKind::UnexpectedPacket { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TickSet;

    fn schedule(node: &str, period: Tick, hp: Tick) -> Instruction {
        let offsets: Vec<Tick> = (0..hp).step_by(period as usize).collect();
        Instruction::SetSchedule {
            node: node.into(),
            sensor: "pm25".into(),
            ticks: TickSet::new(offsets, hp),
        }
    }

    fn observe_all(expected: &ExpectedTimeline) -> ObservedLog {
        let mut deliveries = BTreeSet::new();
        for ((node, sensor), ticks) in &expected.per_key {
            for t in ticks {
                deliveries.insert((node.clone(), sensor.clone(), *t));
            }
        }
        ObservedLog {
            window: expected.window,
            deliveries,
        }
    }

    #[test]
    fn expected_ticks_are_the_arithmetic_progression() {
        let timeline = expected_behavior(&[schedule("n0", 3000, 3000)], (0, 12_000));
        let ticks = &timeline.per_key[&("n0".into(), "pm25".into())];
        assert_eq!(ticks, &vec![0, 3000, 6000, 9000]);
    }

    #[test]
    fn empty_dispatch_log_yields_empty_timeline() {
        let timeline = expected_behavior(&[], (0, 10_000));
        assert!(timeline.per_key.is_empty());
    }

    #[test]
    fn merged_coprime_schedule_expectation() {
        let ticks = TickSet::new(vec![0, 3, 4, 6, 8, 9], 12);
        let instr = Instruction::SetSchedule {
            node: "n0".into(),
            sensor: "pm25".into(),
            ticks,
        };
        let timeline = expected_behavior(&[instr], (0, 12));
        assert_eq!(
            timeline.per_key[&("n0".into(), "pm25".into())],
            vec![0, 3, 4, 6, 8, 9]
        );
    }

    #[test]
    fn perfect_trace_raises_nothing() {
        let expected = expected_behavior(&[schedule("n0", 600, 600)], (0, 36_000));
        let observed = observe_all(&expected);
        let anomalies = diff(&expected, &observed, &MonitorThresholds::default()).unwrap();
        assert!(anomalies.is_empty());
    }

    #[test]
    fn window_mismatch_rejected() {
        let expected = expected_behavior(&[schedule("n0", 600, 600)], (0, 1000));
        let observed = ObservedLog {
            window: (0, 2000),
            ..Default::default()
        };
        assert!(matches!(
            diff(&expected, &observed, &MonitorThresholds::default()),
            Err(MonitorError::WindowMismatch { .. })
        ));
    }

    #[test]
    fn node_dead_from_t_detected_at_third_missed_tick() {
        // Period 3000, node silent from tick 7000: misses at 9000, 12000,
        // 15000; NodeSilent raised exactly at the third.
        let expected = expected_behavior(&[schedule("n0", 3000, 3000)], (0, 36_000));
        let mut observed = observe_all(&expected);
        observed.deliveries.retain(|(_, _, t)| *t < 7000);
        let anomalies = diff(&expected, &observed, &MonitorThresholds::default()).unwrap();
        let silent: Vec<_> = anomalies
            .iter()
            .filter(|a| matches!(a.kind, AnomalyKind::NodeSilent { .. }))
            .collect();
        assert_eq!(silent.len(), 1);
        assert_eq!(silent[0].first_tick, 15_000);
        match &silent[0].kind {
            AnomalyKind::NodeSilent {
                consecutive_misses,
                missed_ticks,
            } => {
                assert_eq!(*consecutive_misses, 3);
                assert_eq!(missed_ticks, &vec![9000, 12_000, 15_000]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn detection_happens_for_any_silence_start() {
        // Detection completeness: wherever the silence starts, the anomaly
        // lands on exactly the third missed expected tick.
        for start in [0u64, 100, 2999, 3000, 10_000] {
            let expected = expected_behavior(&[schedule("n0", 1000, 1000)], (0, 50_000));
            let mut observed = observe_all(&expected);
            observed.deliveries.retain(|(_, _, t)| *t < start);
            let mut th = MonitorThresholds::default();
            th.excess_loss_threshold = 1.1; // isolate NodeSilent
            let anomalies = diff(&expected, &observed, &th).unwrap();
            assert_eq!(anomalies.len(), 1, "start {start}");
            let first_miss = start.div_ceil(1000) * 1000;
            assert_eq!(anomalies[0].first_tick, first_miss + 2000, "start {start}");
        }
    }

    #[test]
    fn spurious_packet_reported() {
        let expected = expected_behavior(&[schedule("n0", 600, 600)], (0, 6000));
        let mut observed = observe_all(&expected);
        observed.deliveries.insert(("n0".into(), "pm25".into(), 17));
        let anomalies = diff(&expected, &observed, &MonitorThresholds::default()).unwrap();
        assert_eq!(anomalies.len(), 1);
        assert!(matches!(
            anomalies[0].kind,
            AnomalyKind::UnexpectedPacket { .. }
        ));
        assert_eq!(anomalies[0].first_tick, 17);
    }

    #[test]
    fn scattered_loss_raises_excess_loss_not_silence() {
        // Every third delivery missing: rate 1/3 over the window, but never
        // three consecutive misses.
        let expected = expected_behavior(&[schedule("n0", 600, 600)], (0, 36_000));
        let mut observed = observe_all(&expected);
        observed.deliveries.retain(|(_, _, t)| (t / 600) % 3 != 0);
        let anomalies = diff(&expected, &observed, &MonitorThresholds::default()).unwrap();
        assert_eq!(anomalies.len(), 1);
        match &anomalies[0].kind {
            AnomalyKind::ExcessLoss { rate, .. } => {
                assert!((rate - 1.0 / 3.0).abs() < 0.02, "rate {rate}");
            }
            other => panic!("expected ExcessLoss, got {other:?}"),
        }
    }

    #[test]
    fn armed_confirmation_re_raises_on_the_next_miss() {
        let mut th = MonitorThresholds::default();
        th.excess_loss_threshold = 1.1;
        let mut engine = MonitorEngine::new(th);
        let dispatch = [schedule("n0", 1000, 1000)];
        let expected1 = expected_behavior(&dispatch, (0, 10_000));
        let silent = ObservedLog {
            window: (0, 10_000),
            deliveries: BTreeSet::new(),
        };
        let first = engine.observe_window(&expected1, &silent);
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].first_tick, 2000); // third missed tick
                                               // Without arming, the ongoing episode stays quiet.
        let expected2 = expected_behavior(&dispatch, (10_000, 20_000));
        let silent2 = ObservedLog {
            window: (10_000, 20_000),
            deliveries: BTreeSet::new(),
        };
        assert!(engine.observe_window(&expected2, &silent2).is_empty());
        // After a restart was issued, the very next miss confirms failure;
        // the accumulated count keeps the >= threshold invariant.
        engine.arm_confirmation(&"n0".into());
        let expected3 = expected_behavior(&dispatch, (20_000, 21_000));
        let silent3 = ObservedLog {
            window: (20_000, 21_000),
            deliveries: BTreeSet::new(),
        };
        let third = engine.observe_window(&expected3, &silent3);
        assert_eq!(third.len(), 1);
        assert_eq!(third[0].first_tick, 20_000);
        match &third[0].kind {
            AnomalyKind::NodeSilent {
                consecutive_misses, ..
            } => assert_eq!(*consecutive_misses, 21),
            other => panic!("expected NodeSilent, got {other:?}"),
        }
    }

    #[test]
    fn escalation_restart_then_field_replace() {
        let node: DeviceId = "n17".into();
        let anomaly = Anomaly {
            node: node.clone(),
            first_tick: 9000,
            kind: AnomalyKind::NodeSilent {
                consecutive_misses: 3,
                missed_ticks: vec![3000, 6000, 9000],
            },
        };
        let mut history = MaintenanceHistory::default();
        let first = maintenance_action(&anomaly, &history, 9000).unwrap();
        assert_eq!(first, MaintenanceAction::Restart { node: node.clone() });
        assert_eq!(first.cost_level(), Some(1));
        history.record_restart(&node, 9000, 9000 + 12_000);
        let second = maintenance_action(&anomaly, &history, 15_000).unwrap();
        assert_eq!(
            second,
            MaintenanceAction::FieldReplace { node: node.clone() }
        );
        assert_eq!(second.cost_level(), Some(3));
        // Outside the confirmation window it is a fresh restart again.
        history.clear(&node);
        let third = maintenance_action(&anomaly, &history, 50_000).unwrap();
        assert_eq!(third, MaintenanceAction::Restart { node });
    }

    #[test]
    fn excess_loss_recommends_channel_rescan() {
        let anomaly = Anomaly {
            node: "n3".into(),
            first_tick: 600,
            kind: AnomalyKind::ExcessLoss {
                rate: 0.4,
                expected: 60,
                missed: 24,
            },
        };
        let action = maintenance_action(&anomaly, &MaintenanceHistory::default(), 600).unwrap();
        assert_eq!(
            action,
            MaintenanceAction::ChannelRescan { node: "n3".into() }
        );
        assert_eq!(action.cost_level(), None);
    }
}
