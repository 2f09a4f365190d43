//! Subscription merging and result fan-out.
//!
//! All active subscriptions on one (node, sensor) are merged into the exact
//! union of their demanded ticks over one hyperperiod — the minimal physical
//! acquisition schedule that still serves every subscriber. Thresholds of
//! trigger-only subscribers are pushed down to the node. On the way back,
//! each delivered reading fans out only to the users whose own tick set
//! demanded it.

use crate::functions::{Subscription, SubscriptionTarget};
use crate::ids::{DeviceId, FunctionId, SensorKind, Tick, UserId};
use crate::sim::{Instruction, ThresholdSpec, TickSet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiddlewareError {
    #[error("hyperperiod overflows the tick range")]
    Overflow,
    #[error("period must be >= 1")]
    ZeroPeriod,
    #[error("reading at tick {tick} on ({node}, {sensor}) was never demanded")]
    OrphanReading {
        node: DeviceId,
        sensor: SensorKind,
        tick: Tick,
    },
}

/// Least common multiple of the periods, with overflow detected.
pub fn hyperperiod(periods: &[Tick]) -> Result<Tick, MiddlewareError> {
    if periods.is_empty() {
        return Err(MiddlewareError::ZeroPeriod);
    }
    let mut acc: Tick = 1;
    for &p in periods {
        if p == 0 {
            return Err(MiddlewareError::ZeroPeriod);
        }
        let g = gcd(acc, p);
        acc = (acc / g).checked_mul(p).ok_or(MiddlewareError::Overflow)?;
    }
    Ok(acc)
}

fn gcd(mut a: Tick, mut b: Tick) -> Tick {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The merged physical schedule for one (node, sensor): the exact union of
/// contributor tick sets over one hyperperiod, plus every pushed threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedSchedule {
    pub node: DeviceId,
    pub sensor: SensorKind,
    pub ticks: TickSet,
    pub contributors: Vec<Subscription>,
    pub pushed_thresholds: Vec<ThresholdSpec>,
}

impl MergedSchedule {
    /// Physical acquisitions per hyperperiod.
    pub fn acquisitions_per_hyperperiod(&self) -> usize {
        self.ticks.len_per_hyperperiod()
    }
}

pub type ScheduleKey = (DeviceId, SensorKind);

/// Merge sensor subscriptions per (node, sensor). Compute subscriptions are
/// not schedulable acquisitions and are skipped here.
pub fn aggregate(
    subscriptions: &[Subscription],
) -> Result<BTreeMap<ScheduleKey, MergedSchedule>, MiddlewareError> {
    let mut by_key: BTreeMap<ScheduleKey, Vec<Subscription>> = BTreeMap::new();
    for sub in subscriptions {
        if let SubscriptionTarget::Sensor { sensor } = &sub.target {
            by_key
                .entry((sub.node.clone(), sensor.clone()))
                .or_default()
                .push(sub.clone());
        }
    }
    let mut out = BTreeMap::new();
    for ((node, sensor), contributors) in by_key {
        let periods: Vec<Tick> = contributors.iter().map(|s| s.period).collect();
        let hp = hyperperiod(&periods)?;
        let mut offsets = Vec::new();
        for sub in &contributors {
            let phase = sub.phase();
            let mut t = phase;
            while t < hp {
                offsets.push(t);
                t += sub.period;
            }
        }
        let ticks = TickSet::new(offsets, hp);
        let mut pushed: Vec<ThresholdSpec> = contributors
            .iter()
            .filter(|s| s.deliver_only_on_trigger)
            .filter_map(|s| s.threshold)
            .collect();
        pushed.sort_by_key(threshold_sort_key);
        pushed.dedup_by_key(|t| threshold_sort_key(t));
        out.insert(
            (node.clone(), sensor.clone()),
            MergedSchedule {
                node,
                sensor,
                ticks,
                contributors,
                pushed_thresholds: pushed,
            },
        );
    }
    Ok(out)
}

fn threshold_sort_key(t: &ThresholdSpec) -> (u8, u64) {
    let cmp = match t.comparator {
        crate::sim::Comparator::Lt => 0,
        crate::sim::Comparator::Le => 1,
        crate::sim::Comparator::Gt => 2,
        crate::sim::Comparator::Ge => 3,
    };
    (cmp, t.value.to_bits())
}

/// Translate merged schedules to node instructions: exactly one SetSchedule
/// and at most one SetThreshold per key. Re-emission replaces, not appends.
pub fn emit_instructions(schedules: &BTreeMap<ScheduleKey, MergedSchedule>) -> Vec<Instruction> {
    let mut out = Vec::new();
    for ((node, sensor), merged) in schedules {
        out.push(Instruction::SetSchedule {
            node: node.clone(),
            sensor: sensor.clone(),
            ticks: merged.ticks.clone(),
        });
        if !merged.pushed_thresholds.is_empty() {
            out.push(Instruction::SetThreshold {
                node: node.clone(),
                sensor: sensor.clone(),
                thresholds: merged.pushed_thresholds.clone(),
            });
        }
    }
    out
}

/// A reading that reached the gateway, tagged with the union tick it served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveredReading {
    pub node: DeviceId,
    pub sensor: SensorKind,
    /// The scheduled union tick this acquisition served.
    pub demand_tick: Tick,
    /// When it actually arrived (>= demand_tick under deferral).
    pub delivered_tick: Tick,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum DeliveryKind {
    Sample {
        value: f64,
    },
    Alert {
        value: f64,
        threshold: ThresholdSpec,
    },
    Compute,
}

/// One per-user result: exists only because that user's own tick set (or
/// trigger condition) demanded it. `billed_units` is 1 per sample or alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub function_id: FunctionId,
    pub user: UserId,
    pub tier: u8,
    pub node: DeviceId,
    pub sensor: SensorKind,
    pub demand_tick: Tick,
    pub delivered_tick: Tick,
    #[serde(flatten)]
    pub kind: DeliveryKind,
    pub billed_units: u64,
}

/// Fan delivered readings back out per user. A user receives a record for a
/// reading at tick t iff t is in the user's own tick set; trigger-only users
/// additionally require their pushed comparator to hold (and their
/// time-of-day guard, when present). `day_ticks` is the day length for
/// guards; pass 0 when no guards are in play.
pub fn fan_out(
    readings: &[DeliveredReading],
    schedules: &BTreeMap<ScheduleKey, MergedSchedule>,
    day_ticks: Tick,
) -> Result<Vec<DeliveryRecord>, MiddlewareError> {
    let mut out = Vec::new();
    for reading in readings {
        let key = (reading.node.clone(), reading.sensor.clone());
        let merged = schedules
            .get(&key)
            .ok_or_else(|| MiddlewareError::OrphanReading {
                node: reading.node.clone(),
                sensor: reading.sensor.clone(),
                tick: reading.demand_tick,
            })?;
        if !merged.ticks.contains(reading.demand_tick) {
            return Err(MiddlewareError::OrphanReading {
                node: reading.node.clone(),
                sensor: reading.sensor.clone(),
                tick: reading.demand_tick,
            });
        }
        for sub in &merged.contributors {
            if !sub.demands(reading.demand_tick) {
                continue;
            }
            let kind = if sub.deliver_only_on_trigger {
                let threshold = sub.threshold.expect("trigger subscription has threshold");
                if !threshold.holds(reading.value) {
                    continue;
                }
                if let Some(guard) = &sub.time_of_day {
                    if !guard.holds(reading.demand_tick, day_ticks) {
                        continue;
                    }
                }
                DeliveryKind::Alert {
                    value: reading.value,
                    threshold,
                }
            } else {
                DeliveryKind::Sample {
                    value: reading.value,
                }
            };
            out.push(DeliveryRecord {
                function_id: sub.function_id.clone(),
                user: sub.user.clone(),
                tier: sub.tier,
                node: reading.node.clone(),
                sensor: reading.sensor.clone(),
                demand_tick: reading.demand_tick,
                delivered_tick: reading.delivered_tick,
                kind,
                billed_units: 1,
            });
        }
    }
    Ok(out)
}
