//! User-submitted serverless functions: declarative rules parsed from
//! structured text, validated against the platform's writing-specification
//! limits, and compiled into per-node subscriptions.
//!
//! Everything here is pure: parsing is total (any input yields a spec or a
//! positioned error), validation reports every violated limit, and
//! compilation only reads the topology.

pub mod compile;
pub mod parse;
pub mod selector;

pub use compile::{
    compile_to_subscriptions, CompileError, ControlAction, Subscription, SubscriptionTarget,
};
pub use parse::{parse_function, serialize_function, ParseError};
pub use selector::Selector;

use crate::ids::{ActuatorKind, DeviceId, FunctionId, SensorKind, Tick, UserId};
use crate::scenario::LimitsConfig;
use crate::sim::Comparator;
use serde::{Deserialize, Serialize};

/// A parsed function document: one declarative rule of one of four kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub id: FunctionId,
    /// Owner; may be empty at parse time and is set on submission.
    pub user: UserId,
    pub tier: u8,
    pub kind: FunctionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionKind {
    /// Sample a sensor on every matched node, every `period_ticks`.
    PeriodicCollect {
        selector: Selector,
        sensor: SensorKind,
        period_ticks: Tick,
        anchor_ticks: Tick,
        /// When set, the user's demand covers only ticks in [0, window).
        window_ticks: Option<Tick>,
    },
    /// Sample periodically but deliver only when the comparison holds.
    ThresholdAlert {
        selector: Selector,
        sensor: SensorKind,
        period_ticks: Tick,
        anchor_ticks: Tick,
        comparator: Comparator,
        threshold: f64,
    },
    /// Evaluate a flat sensor condition periodically; on trigger, drive the
    /// matched actuators.
    ControlRule {
        condition: Condition,
        action: ActuatorAction,
    },
    /// Periodically occupy matched edge devices with a compute task.
    EdgeCompute {
        selector: Selector,
        duration_ticks: Tick,
        period_ticks: Tick,
        anchor_ticks: Tick,
    },
}

/// A flat comparator over one sensor, with an optional time-of-day guard.
/// No nesting beyond the guard: the sandbox has no expression language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub node: DeviceId,
    pub sensor: SensorKind,
    pub comparator: Comparator,
    pub value: f64,
    pub period_ticks: Tick,
    pub anchor_ticks: Tick,
    pub time_of_day: Option<TimeOfDayGuard>,
}

impl Condition {
    /// Nesting depth: the comparator counts 1, the guard adds 1.
    pub fn depth(&self) -> u32 {
        1 + u32::from(self.time_of_day.is_some())
    }
}

/// Restricts a condition to ticks whose position within the day falls in
/// [start_tick, end_tick).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeOfDayGuard {
    pub start_tick: Tick,
    pub end_tick: Tick,
}

impl TimeOfDayGuard {
    pub fn holds(&self, tick: Tick, day_ticks: Tick) -> bool {
        if day_ticks == 0 {
            return true;
        }
        let t = tick % day_ticks;
        t >= self.start_tick && t < self.end_tick
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorAction {
    pub selector: Selector,
    pub actuator: ActuatorKind,
    pub value: f64,
}

impl FunctionSpec {
    pub fn selector(&self) -> &Selector {
        match &self.kind {
            FunctionKind::PeriodicCollect { selector, .. }
            | FunctionKind::ThresholdAlert { selector, .. }
            | FunctionKind::EdgeCompute { selector, .. } => selector,
            FunctionKind::ControlRule { action, .. } => &action.selector,
        }
    }

    pub fn period_ticks(&self) -> Tick {
        match &self.kind {
            FunctionKind::PeriodicCollect { period_ticks, .. }
            | FunctionKind::ThresholdAlert { period_ticks, .. }
            | FunctionKind::EdgeCompute { period_ticks, .. } => *period_ticks,
            FunctionKind::ControlRule { condition, .. } => condition.period_ticks,
        }
    }
}

/// One violated writing-specification limit. Violations are values, not
/// errors: validation always reports the complete list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    FunctionCount { held: usize, limit: usize },
    ConditionDepth { depth: u32, limit: u32 },
    PeriodFloor { period: Tick, floor: Tick },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::FunctionCount { held, limit } => {
                write!(f, "user already holds {held} functions (limit {limit})")
            }
            Violation::ConditionDepth { depth, limit } => {
                write!(f, "condition depth {depth} exceeds limit {limit}")
            }
            Violation::PeriodFloor { period, floor } => {
                write!(f, "period {period} below floor {floor}")
            }
        }
    }
}

/// What the validator needs to know about the submitting user.
#[derive(Debug, Clone, Copy, Default)]
pub struct UserState {
    pub active_functions: usize,
}

/// Check a parsed spec against the limits. Returns every violation, not just
/// the first; an empty list means the spec is admissible.
pub fn validate(spec: &FunctionSpec, limits: &LimitsConfig, user: &UserState) -> Vec<Violation> {
    let mut out = Vec::new();
    if user.active_functions >= limits.max_functions_per_user {
        out.push(Violation::FunctionCount {
            held: user.active_functions,
            limit: limits.max_functions_per_user,
        });
    }
    if let FunctionKind::ControlRule { condition, .. } = &spec.kind {
        let depth = condition.depth();
        if depth > limits.max_condition_depth {
            out.push(Violation::ConditionDepth {
                depth,
                limit: limits.max_condition_depth,
            });
        }
    }
    let period = spec.period_ticks();
    if period < limits.min_period_ticks {
        out.push(Violation::PeriodFloor {
            period,
            floor: limits.min_period_ticks,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect_spec(period: Tick) -> FunctionSpec {
        FunctionSpec {
            id: FunctionId::new("f1"),
            user: UserId::new("ann"),
            tier: 2,
            kind: FunctionKind::PeriodicCollect {
                selector: Selector::parse("class:constrained with:pm25").unwrap(),
                sensor: SensorKind::new("pm25"),
                period_ticks: period,
                anchor_ticks: 0,
                window_ticks: None,
            },
        }
    }

    fn control_spec(with_guard: bool) -> FunctionSpec {
        FunctionSpec {
            id: FunctionId::new("f2"),
            user: UserId::new("city"),
            tier: 1,
            kind: FunctionKind::ControlRule {
                condition: Condition {
                    node: DeviceId::new("n0"),
                    sensor: SensorKind::new("temperature"),
                    comparator: Comparator::Ge,
                    value: 30.0,
                    period_ticks: 600,
                    anchor_ticks: 0,
                    time_of_day: with_guard.then_some(TimeOfDayGuard {
                        start_tick: 0,
                        end_tick: 100,
                    }),
                },
                action: ActuatorAction {
                    selector: Selector::parse("class:edge").unwrap(),
                    actuator: ActuatorKind::new("lane_sign"),
                    value: 1.0,
                },
            },
        }
    }

    #[test]
    fn validate_flags_function_count() {
        let limits = LimitsConfig::default();
        let v = validate(
            &collect_spec(3000),
            &limits,
            &UserState {
                active_functions: 16,
            },
        );
        assert_eq!(
            v,
            vec![Violation::FunctionCount {
                held: 16,
                limit: 16
            }]
        );
    }

    #[test]
    fn validate_accepts_depth_within_limit() {
        let limits = LimitsConfig::default();
        assert!(validate(&control_spec(false), &limits, &UserState::default()).is_empty());
        // Depth 2 (comparator + guard) is still within the default limit 2.
        assert!(validate(&control_spec(true), &limits, &UserState::default()).is_empty());
        let tight = LimitsConfig {
            max_condition_depth: 1,
            ..limits
        };
        let v = validate(&control_spec(true), &tight, &UserState::default());
        assert_eq!(v, vec![Violation::ConditionDepth { depth: 2, limit: 1 }]);
    }

    #[test]
    fn validate_flags_zero_period() {
        let limits = LimitsConfig::default();
        let v = validate(&collect_spec(0), &limits, &UserState::default());
        assert_eq!(
            v,
            vec![Violation::PeriodFloor {
                period: 0,
                floor: 1
            }]
        );
    }

    #[test]
    fn validate_reports_all_violations_together() {
        let limits = LimitsConfig::default();
        let v = validate(
            &collect_spec(0),
            &limits,
            &UserState {
                active_functions: 20,
            },
        );
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn validate_is_pure() {
        let limits = LimitsConfig::default();
        let state = UserState {
            active_functions: 3,
        };
        let a = validate(&collect_spec(5), &limits, &state);
        let b = validate(&collect_spec(5), &limits, &state);
        assert_eq!(a, b);
    }
}
