//! Compilation of validated specs into per-node subscriptions: one
//! subscription per matched device, with thresholds attached for alert and
//! control kinds.

use super::{FunctionKind, FunctionSpec, TimeOfDayGuard};
use crate::ids::{ActuatorKind, DeviceId, FunctionId, SensorKind, Tick, UserId};
use crate::sim::{ThresholdSpec, Topology};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error("selector `{0}` matches no device")]
    EmptySelector(String),
    #[error("device {node} does not own sensor {sensor}")]
    UnknownSensor { node: DeviceId, sensor: SensorKind },
    #[error("device {node} does not own actuator {actuator}")]
    UnknownActuator {
        node: DeviceId,
        actuator: ActuatorKind,
    },
}

/// A compiled demand on one node: the unit the middleware merges and the
/// scheduler admits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub function_id: FunctionId,
    pub user: UserId,
    pub tier: u8,
    pub node: DeviceId,
    pub target: SubscriptionTarget,
    /// Demanded ticks: anchor + k*period, optionally bounded to [0, window).
    pub anchor: Tick,
    pub period: Tick,
    pub window: Option<Tick>,
    pub threshold: Option<ThresholdSpec>,
    pub deliver_only_on_trigger: bool,
    pub time_of_day: Option<TimeOfDayGuard>,
    /// For control rules: the actuators to drive when the threshold fires.
    pub control_action: Option<ControlAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum SubscriptionTarget {
    Sensor { sensor: SensorKind },
    Compute { duration_ticks: Tick },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub targets: Vec<(DeviceId, ActuatorKind)>,
    pub value: f64,
}

impl Subscription {
    pub fn sensor(&self) -> Option<&SensorKind> {
        match &self.target {
            SubscriptionTarget::Sensor { sensor } => Some(sensor),
            SubscriptionTarget::Compute { .. } => None,
        }
    }

    /// Whether this subscription demands a result for `tick`. Anchors are
    /// phase offsets: the demanded set is {t : t ≡ anchor (mod period)},
    /// bounded to [0, window) when a window is set.
    pub fn demands(&self, tick: Tick) -> bool {
        if self.period == 0 || tick % self.period != self.anchor % self.period {
            return false;
        }
        match self.window {
            Some(w) => tick < w,
            None => true,
        }
    }

    /// Offset of this subscription's ticks within its period.
    pub fn phase(&self) -> Tick {
        self.anchor % self.period.max(1)
    }
}

/// Compile a spec against a topology: one subscription per matched device.
/// Every emitted node is checked to own the referenced sensor or actuator.
pub fn compile_to_subscriptions(
    spec: &FunctionSpec,
    topology: &Topology,
) -> Result<Vec<Subscription>, CompileError> {
    let base = |node: &DeviceId| Subscription {
        function_id: spec.id.clone(),
        user: spec.user.clone(),
        tier: spec.tier,
        node: node.clone(),
        target: SubscriptionTarget::Sensor {
            sensor: SensorKind::new(""),
        },
        anchor: 0,
        period: 1,
        window: None,
        threshold: None,
        deliver_only_on_trigger: false,
        time_of_day: None,
        control_action: None,
    };

    match &spec.kind {
        FunctionKind::PeriodicCollect {
            selector,
            sensor,
            period_ticks,
            anchor_ticks,
            window_ticks,
        } => {
            let nodes = resolve_nonempty(selector, topology)?;
            nodes
                .into_iter()
                .map(|node| {
                    require_sensor(topology, &node, sensor)?;
                    Ok(Subscription {
                        target: SubscriptionTarget::Sensor {
                            sensor: sensor.clone(),
                        },
                        anchor: *anchor_ticks,
                        period: *period_ticks,
                        window: *window_ticks,
                        ..base(&node)
                    })
                })
                .collect()
        }
        FunctionKind::ThresholdAlert {
            selector,
            sensor,
            period_ticks,
            anchor_ticks,
            comparator,
            threshold,
        } => {
            let nodes = resolve_nonempty(selector, topology)?;
            nodes
                .into_iter()
                .map(|node| {
                    require_sensor(topology, &node, sensor)?;
                    Ok(Subscription {
                        target: SubscriptionTarget::Sensor {
                            sensor: sensor.clone(),
                        },
                        anchor: *anchor_ticks,
                        period: *period_ticks,
                        threshold: Some(ThresholdSpec {
                            comparator: *comparator,
                            value: *threshold,
                        }),
                        deliver_only_on_trigger: true,
                        ..base(&node)
                    })
                })
                .collect()
        }
        FunctionKind::ControlRule { condition, action } => {
            require_sensor(topology, &condition.node, &condition.sensor)?;
            let targets = resolve_nonempty(&action.selector, topology)?;
            let mut pairs = Vec::new();
            for t in targets {
                let dev = topology.device(&t).expect("resolved device exists");
                if !dev.actuators.contains(&action.actuator) {
                    return Err(CompileError::UnknownActuator {
                        node: t,
                        actuator: action.actuator.clone(),
                    });
                }
                pairs.push((t, action.actuator.clone()));
            }
            Ok(vec![Subscription {
                target: SubscriptionTarget::Sensor {
                    sensor: condition.sensor.clone(),
                },
                anchor: condition.anchor_ticks,
                period: condition.period_ticks,
                threshold: Some(ThresholdSpec {
                    comparator: condition.comparator,
                    value: condition.value,
                }),
                deliver_only_on_trigger: true,
                time_of_day: condition.time_of_day,
                control_action: Some(ControlAction {
                    targets: pairs,
                    value: action.value,
                }),
                ..base(&condition.node)
            }])
        }
        FunctionKind::EdgeCompute {
            selector,
            duration_ticks,
            period_ticks,
            anchor_ticks,
        } => {
            let nodes = resolve_nonempty(selector, topology)?;
            Ok(nodes
                .into_iter()
                .map(|node| Subscription {
                    target: SubscriptionTarget::Compute {
                        duration_ticks: *duration_ticks,
                    },
                    anchor: *anchor_ticks,
                    period: *period_ticks,
                    ..base(&node)
                })
                .collect())
        }
    }
}

fn resolve_nonempty(
    selector: &crate::functions::Selector,
    topology: &Topology,
) -> Result<Vec<DeviceId>, CompileError> {
    let nodes = selector.resolve(topology);
    if nodes.is_empty() {
        return Err(CompileError::EmptySelector(selector.canonical()));
    }
    Ok(nodes)
}

fn require_sensor(
    topology: &Topology,
    node: &DeviceId,
    sensor: &SensorKind,
) -> Result<(), CompileError> {
    let dev = topology
        .device(node)
        .map_err(|_| CompileError::UnknownSensor {
            node: node.clone(),
            sensor: sensor.clone(),
        })?;
    if !dev.sensors.contains(sensor) {
        return Err(CompileError::UnknownSensor {
            node: node.clone(),
            sensor: sensor.clone(),
        });
    }
    Ok(())
}
