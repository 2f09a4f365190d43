//! Admission control against per-node capacity W, three-tier preemptive
//! dispatch with FIFO deferral, bounded-retry execution, and per-tier
//! success-rate accounting.

use crate::billing::Currency;
use crate::functions::{Subscription, SubscriptionTarget};
use crate::ids::{ActuatorKind, DeviceId, SensorKind, Tick};
use crate::middleware::hyperperiod;
use crate::scenario::TierConfig;
use serde::Serialize;
use std::collections::BTreeMap;

/// One priority tier. Lower numbers preempt higher ones and pay more per
/// acquisition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierPolicy {
    pub tier: u8,
    pub target_success_rate: f64,
    pub max_retries: u32,
    /// The strictly lower-priority tiers this one displaces.
    pub preempts: Vec<u8>,
    pub rate_per_acquisition: Currency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierPolicies {
    by_tier: BTreeMap<u8, TierPolicy>,
}

impl TierPolicies {
    pub fn from_configs(configs: &[TierConfig]) -> Self {
        let tiers: Vec<u8> = configs.iter().map(|c| c.tier).collect();
        let by_tier = configs
            .iter()
            .map(|c| {
                (
                    c.tier,
                    TierPolicy {
                        tier: c.tier,
                        target_success_rate: c.target_success_rate,
                        max_retries: c.max_retries,
                        preempts: tiers.iter().copied().filter(|t| *t > c.tier).collect(),
                        rate_per_acquisition: c.rate_per_acquisition,
                    },
                )
            })
            .collect();
        Self { by_tier }
    }

    pub fn get(&self, tier: u8) -> Option<&TierPolicy> {
        self.by_tier.get(&tier)
    }

    pub fn rates(&self) -> BTreeMap<u8, Currency> {
        self.by_tier
            .iter()
            .map(|(t, p)| (*t, p.rate_per_acquisition))
            .collect()
    }

    pub fn targets(&self) -> BTreeMap<u8, f64> {
        self.by_tier
            .iter()
            .map(|(t, p)| (*t, p.target_success_rate))
            .collect()
    }
}

/// Why an admission was refused. Rejection is a value, not an error: the
/// load book is untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    CapacityExceeded {
        node: DeviceId,
        would_be: u64,
        capacity: u64,
    },
    ScheduleOverflow,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::CapacityExceeded {
                node,
                would_be,
                capacity,
            } => write!(
                f,
                "node {node} would carry {would_be} acquisitions per minute (capacity {capacity})"
            ),
            RejectReason::ScheduleOverflow => write!(f, "schedule hyperperiod overflow"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmitOutcome {
    Accepted { node_load: u64, added: u64 },
    Rejected(RejectReason),
}

impl AdmitOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AdmitOutcome::Accepted { .. })
    }
}

/// Phase/period pair: the admission-relevant shape of one subscription.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DemandShape {
    phase: Tick,
    period: Tick,
}

/// Tracks committed acquisition demand per node against the per-minute cap.
/// Admission recomputes the merged union exactly; there is no fractional
/// utilization heuristic.
#[derive(Debug, Clone)]
pub struct LoadBook {
    capacity_w: u64,
    ticks_per_minute: u64,
    demands: BTreeMap<(DeviceId, SensorKind), Vec<DemandShape>>,
}

impl LoadBook {
    pub fn new(capacity_w: u64, ticks_per_minute: u64) -> Self {
        Self {
            capacity_w,
            ticks_per_minute,
            demands: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity_w
    }

    /// Admit or reject one compiled subscription. Accepted iff, after
    /// re-merging with existing commitments, the node's worst per-minute
    /// union tick count stays within W. The book is updated only on
    /// acceptance. Compute subscriptions consume no acquisition slots.
    pub fn admit(&mut self, sub: &Subscription) -> AdmitOutcome {
        let sensor = match &sub.target {
            SubscriptionTarget::Sensor { sensor } => sensor.clone(),
            SubscriptionTarget::Compute { .. } => {
                return AdmitOutcome::Accepted {
                    node_load: 0,
                    added: 0,
                }
            }
        };
        if sub.period == 0 {
            return AdmitOutcome::Rejected(RejectReason::ScheduleOverflow);
        }
        let shape = DemandShape {
            phase: sub.phase(),
            period: sub.period,
        };
        let key = (sub.node.clone(), sensor);
        let before = match self.node_load(&sub.node) {
            Some(v) => v,
            None => return AdmitOutcome::Rejected(RejectReason::ScheduleOverflow),
        };
        let mut candidate = self.demands.clone();
        candidate.entry(key.clone()).or_default().push(shape);
        let after = match Self::load_of(&candidate, &sub.node, self.ticks_per_minute) {
            Some(v) => v,
            None => return AdmitOutcome::Rejected(RejectReason::ScheduleOverflow),
        };
        if after > self.capacity_w {
            return AdmitOutcome::Rejected(RejectReason::CapacityExceeded {
                node: sub.node.clone(),
                would_be: after,
                capacity: self.capacity_w,
            });
        }
        self.demands = candidate;
        AdmitOutcome::Accepted {
            node_load: after,
            added: after - before,
        }
    }

    /// Exhaustive recount of a node's worst-minute committed load, straight
    /// from the demand table. None on hyperperiod overflow.
    pub fn node_load(&self, node: &DeviceId) -> Option<u64> {
        Self::load_of(&self.demands, node, self.ticks_per_minute)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DeviceId> {
        self.demands.keys().map(|(n, _)| n)
    }

    fn load_of(
        demands: &BTreeMap<(DeviceId, SensorKind), Vec<DemandShape>>,
        node: &DeviceId,
        ticks_per_minute: u64,
    ) -> Option<u64> {
        let mut total = 0u64;
        for ((n, _), shapes) in demands {
            if n != node {
                continue;
            }
            total += Self::minute_max_union(shapes, ticks_per_minute)?;
        }
        Some(total)
    }

    /// Worst minute-aligned window count of the union of the shapes.
    fn minute_max_union(shapes: &[DemandShape], ticks_per_minute: u64) -> Option<u64> {
        if shapes.is_empty() {
            return Some(0);
        }
        let mut periods: Vec<Tick> = shapes.iter().map(|s| s.period).collect();
        periods.push(ticks_per_minute);
        let hp = hyperperiod(&periods).ok()?;
        if hp > 4_000_000 {
            // Beyond this the exact materialization stops being desk-scale.
            return None;
        }
        let hp = hp as usize;
        let mut marks = vec![false; hp];
        for s in shapes {
            let mut t = (s.phase % s.period) as usize;
            while t < hp {
                marks[t] = true;
                t += s.period as usize;
            }
        }
        let tpm = ticks_per_minute as usize;
        let mut worst = 0u64;
        for window in marks.chunks(tpm) {
            let count = window.iter().filter(|m| **m).count() as u64;
            worst = worst.max(count);
        }
        Some(worst)
    }
}

/// Work that competes for a device's per-tick slot.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskWork {
    Acquire {
        sensor: SensorKind,
    },
    Actuate {
        actuator: ActuatorKind,
        value: f64,
    },
    /// `sub_index` names the compute subscription the invocation belongs to.
    Compute {
        duration_ticks: Tick,
        sub_index: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DueTask {
    pub node: DeviceId,
    pub tier: u8,
    /// Arrival order; FIFO within a tier.
    pub seq: u64,
    /// The demand tick this task serves (its original due time).
    pub due_tick: Tick,
    pub deferrals: u64,
    pub work: TaskWork,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StarvationAlarm {
    pub node: DeviceId,
    pub tier: u8,
    pub deferrals: u64,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DispatchOutcome {
    /// Tasks that run this tick, in deterministic node order.
    pub execute: Vec<DueTask>,
    /// Displaced tasks, due again at the next tick.
    pub deferred: Vec<DueTask>,
    /// Deferred tasks that exceeded the deferral bound (reported, not
    /// dropped).
    pub alarms: Vec<StarvationAlarm>,
}

/// Resolve one tick of contention: each node offers one slot; within a
/// node-tick the lowest tier number wins, FIFO within a tier. Tier-3 work
/// runs only when no higher tier is due, which is exactly this ordering.
pub fn dispatch(tick: Tick, due: Vec<DueTask>, deferral_bound: u64) -> DispatchOutcome {
    let mut by_node: BTreeMap<DeviceId, Vec<DueTask>> = BTreeMap::new();
    for task in due {
        by_node.entry(task.node.clone()).or_default().push(task);
    }
    let mut out = DispatchOutcome::default();
    for (_, mut tasks) in by_node {
        tasks.sort_by_key(|t| (t.tier, t.seq));
        let mut iter = tasks.into_iter();
        if let Some(winner) = iter.next() {
            out.execute.push(winner);
        }
        for mut task in iter {
            task.deferrals += 1;
            if task.deferrals == deferral_bound + 1 {
                out.alarms.push(StarvationAlarm {
                    node: task.node.clone(),
                    tier: task.tier,
                    deferrals: task.deferrals,
                    tick,
                });
            }
            out.deferred.push(task);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskResult {
    Success { attempts: u32 },
    Failure { attempts: u32 },
}

impl TaskResult {
    pub fn is_success(self) -> bool {
        matches!(self, TaskResult::Success { .. })
    }
}

/// Run one task with up to `1 + max_retries` independent transmit attempts;
/// success on the first delivered attempt. The outcome is recorded per tier.
pub fn execute_with_retries(
    policy: &TierPolicy,
    mut transmit: impl FnMut() -> bool,
    stats: &mut SuccessStats,
) -> TaskResult {
    let max_attempts = 1 + policy.max_retries;
    for attempt in 1..=max_attempts {
        if transmit() {
            stats.record(policy.tier, true);
            return TaskResult::Success { attempts: attempt };
        }
    }
    stats.record(policy.tier, false);
    TaskResult::Failure {
        attempts: max_attempts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TierCounts {
    pub attempted: u64,
    pub succeeded: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SuccessStats {
    per_tier: BTreeMap<u8, TierCounts>,
}

impl SuccessStats {
    pub fn record(&mut self, tier: u8, success: bool) {
        let counts = self.per_tier.entry(tier).or_default();
        counts.attempted += 1;
        if success {
            counts.succeeded += 1;
        }
    }

    pub fn counts(&self, tier: u8) -> TierCounts {
        self.per_tier.get(&tier).copied().unwrap_or_default()
    }

    pub fn measured_rate(&self, tier: u8) -> Option<f64> {
        let c = self.counts(tier);
        (c.attempted > 0).then(|| c.succeeded as f64 / c.attempted as f64)
    }

    pub fn tiers(&self) -> impl Iterator<Item = u8> + '_ {
        self.per_tier.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessRow {
    pub tier: u8,
    pub attempted: u64,
    pub succeeded: u64,
    pub measured_rate: Option<f64>,
    pub target: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessReport {
    pub rows: Vec<SuccessRow>,
}

/// Per-tier pass/fail table. A tier fails only when it misses its target
/// with at least `min_samples` attempts behind the measurement.
pub fn success_report(
    stats: &SuccessStats,
    targets: &BTreeMap<u8, f64>,
    min_samples: u64,
) -> SuccessReport {
    let rows = targets
        .iter()
        .map(|(&tier, &target)| {
            let counts = stats.counts(tier);
            let measured_rate = stats.measured_rate(tier);
            let verdict = match measured_rate {
                None => Verdict::InsufficientData,
                Some(_) if counts.attempted < min_samples => Verdict::InsufficientData,
                Some(rate) if rate >= target => Verdict::Pass,
                Some(_) => Verdict::Fail,
            };
            SuccessRow {
                tier,
                attempted: counts.attempted,
                succeeded: counts.succeeded,
                measured_rate,
                target,
                verdict,
            }
        })
        .collect();
    SuccessReport { rows }
}

impl std::fmt::Display for SuccessReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "tier  attempted  succeeded  rate      target    verdict")?;
        for r in &self.rows {
            let rate = r
                .measured_rate
                .map(|x| format!("{x:.6}"))
                .unwrap_or_else(|| "-".to_owned());
            writeln!(
                f,
                "{:<5} {:<10} {:<10} {:<9} {:<9.4} {:?}",
                r.tier, r.attempted, r.succeeded, rate, r.target, r.verdict
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{FunctionId, UserId};

    fn acquire_sub(node: &str, period: Tick, anchor: Tick) -> Subscription {
        Subscription {
            function_id: FunctionId::new(format!("f-{node}-{period}-{anchor}")),
            user: UserId::new("u"),
            tier: 2,
            node: node.into(),
            target: SubscriptionTarget::Sensor {
                sensor: "pm25".into(),
            },
            anchor,
            period,
            window: None,
            threshold: None,
            deliver_only_on_trigger: false,
            time_of_day: None,
            control_action: None,
        }
    }

    fn policy(tier: u8, max_retries: u32) -> TierPolicy {
        TierPolicy {
            tier,
            target_success_rate: 0.99,
            max_retries,
            preempts: vec![],
            rate_per_acquisition: Currency::from_str("0.01").unwrap(),
        }
    }

    #[test]
    fn six_hundred_once_a_minute_users_fill_the_node_exactly() {
        // 50 ms ticks: 1200 slots per minute, W = 600 of them sellable.
        let mut book = LoadBook::new(600, 1200);
        for anchor in 0..600 {
            let outcome = book.admit(&acquire_sub("n0", 1200, anchor));
            assert!(outcome.is_accepted(), "anchor {anchor}: {outcome:?}");
        }
        assert_eq!(book.node_load(&"n0".into()).unwrap(), 600);
        // A duplicate-anchor demand shares its tick: zero added load.
        let dup = book.admit(&acquire_sub("n0", 1200, 17));
        assert_eq!(
            dup,
            AdmitOutcome::Accepted {
                node_load: 600,
                added: 0
            }
        );
        // The 601st distinct-anchor user pushes the union to 601 > W.
        let over = book.admit(&acquire_sub("n0", 1200, 600));
        assert!(matches!(
            over,
            AdmitOutcome::Rejected(RejectReason::CapacityExceeded { would_be: 601, .. })
        ));
        assert_eq!(book.node_load(&"n0".into()).unwrap(), 600);
    }

    #[test]
    fn rejected_admission_leaves_book_unchanged() {
        let mut book = LoadBook::new(2, 600);
        assert!(book.admit(&acquire_sub("n1", 300, 0)).is_accepted());
        let before = book.node_load(&"n1".into()).unwrap();
        let rejected = book.admit(&acquire_sub("n1", 200, 100));
        assert!(!rejected.is_accepted());
        assert_eq!(book.node_load(&"n1".into()).unwrap(), before);
    }

    #[test]
    fn subset_ticks_add_zero_load() {
        let mut book = LoadBook::new(600, 600);
        assert!(book.admit(&acquire_sub("n0", 300, 0)).is_accepted());
        let outcome = book.admit(&acquire_sub("n0", 600, 0));
        assert_eq!(
            outcome,
            AdmitOutcome::Accepted {
                node_load: 2,
                added: 0
            }
        );
    }

    fn task(node: &str, tier: u8, seq: u64, tick: Tick) -> DueTask {
        DueTask {
            node: node.into(),
            tier,
            seq,
            due_tick: tick,
            deferrals: 0,
            work: TaskWork::Acquire {
                sensor: "pm25".into(),
            },
        }
    }

    #[test]
    fn tier_one_wins_the_slot_tier_three_defers() {
        let due = vec![task("n0", 3, 0, 10), task("n0", 1, 1, 10)];
        let out = dispatch(10, due, 10);
        assert_eq!(out.execute.len(), 1);
        assert_eq!(out.execute[0].tier, 1);
        assert_eq!(out.deferred.len(), 1);
        assert_eq!(out.deferred[0].tier, 3);
        assert_eq!(out.deferred[0].deferrals, 1);
    }

    #[test]
    fn brute_force_two_task_three_tick_schedule() {
        // One tier-1 and one tier-3 task both due at tick 0 on one node.
        // Exhaustive play-out over three ticks: tier 1 at t0, tier 3 at t1,
        // nothing at t2, and no slot idles while work is pending.
        let mut pending = vec![task("n0", 1, 0, 0), task("n0", 3, 1, 0)];
        let mut executed = Vec::new();
        for t in 0..3u64 {
            let out = dispatch(t, std::mem::take(&mut pending), 10);
            for e in &out.execute {
                executed.push((t, e.tier));
            }
            assert!(
                !(out.execute.is_empty() && !out.deferred.is_empty()),
                "idle slot with deferred work"
            );
            pending = out.deferred;
        }
        assert_eq!(executed, vec![(0, 1), (1, 3)]);
        assert!(pending.is_empty());
    }

    #[test]
    fn single_task_runs_at_its_own_tick() {
        let out = dispatch(5, vec![task("n0", 2, 0, 5)], 10);
        assert_eq!(out.execute.len(), 1);
        assert!(out.deferred.is_empty());
        assert!(out.alarms.is_empty());
    }

    #[test]
    fn fifo_within_tier() {
        let due = vec![task("n0", 2, 0, 7), task("n0", 2, 1, 7)];
        let out = dispatch(7, due, 10);
        assert_eq!(out.execute[0].seq, 0);
        assert_eq!(out.deferred[0].seq, 1);
    }

    #[test]
    fn starvation_alarm_raised_once_past_bound() {
        let mut pending = vec![task("n0", 1, 0, 0), task("n0", 3, 1, 0)];
        // Keep injecting fresh tier-1 work so the tier-3 task starves.
        let mut alarms = Vec::new();
        for t in 0..20u64 {
            let mut due = std::mem::take(&mut pending);
            if t > 0 {
                due.push(task("n0", 1, 100 + t, t));
            }
            let out = dispatch(t, due, 10);
            alarms.extend(out.alarms);
            pending = out.deferred;
        }
        assert_eq!(alarms.len(), 1);
        assert_eq!(alarms[0].tier, 3);
        assert_eq!(alarms[0].deferrals, 11);
    }

    #[test]
    fn priority_correctness_on_random_traces() {
        // No tier-k task executes while a lower-numbered task is due at the
        // same node-tick.
        let mut x = 5u64;
        for _ in 0..50 {
            let mut due = Vec::new();
            for seq in 0..8 {
                x = crate::rng::mix64(x);
                due.push(task(&format!("n{}", x % 3), (x / 3 % 3 + 1) as u8, seq, 0));
            }
            let out = dispatch(0, due.clone(), 10);
            for e in &out.execute {
                for d in &out.deferred {
                    if d.node == e.node {
                        assert!(d.tier >= e.tier);
                    }
                }
            }
        }
    }

    #[test]
    fn retries_lossless_succeeds_first_attempt() {
        let mut stats = SuccessStats::default();
        let result = execute_with_retries(&policy(1, 5), || true, &mut stats);
        assert_eq!(result, TaskResult::Success { attempts: 1 });
    }

    #[test]
    fn retries_fully_lossy_fails_after_all_attempts() {
        let mut stats = SuccessStats::default();
        let result = execute_with_retries(&policy(1, 2), || false, &mut stats);
        assert_eq!(result, TaskResult::Failure { attempts: 3 });
        assert_eq!(stats.counts(1).attempted, 1);
        assert_eq!(stats.counts(1).succeeded, 0);
    }

    #[test]
    fn retry_success_rate_matches_analytic_value() {
        // p = 0.05, one retry: per-task success 1 - p^2 = 0.9975.
        use rand::Rng;
        let trials = 100_000u64;
        let mut rng = crate::rng::stream(11, 77);
        let mut stats = SuccessStats::default();
        let pol = policy(1, 1);
        for _ in 0..trials {
            execute_with_retries(&pol, || rng.gen::<f64>() >= 0.05, &mut stats);
        }
        let rate = stats.measured_rate(1).unwrap();
        let expect = 0.9975;
        assert!((rate - expect).abs() < 0.003, "rate {rate}");
        assert!(rate >= 0.99);
        // And within 3 standard errors of the analytic mean.
        let se = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!(
            (rate - expect).abs() <= 3.0 * se,
            "rate {rate}, 3se {}",
            3.0 * se
        );
    }

    #[test]
    fn report_verdicts() {
        let mut stats = SuccessStats::default();
        for i in 0..10_000 {
            stats.record(1, i % 1000 != 0);
        }
        for i in 0..1000 {
            stats.record(2, i < 980);
        }
        let mut targets = BTreeMap::new();
        targets.insert(1, 0.99);
        targets.insert(2, 0.99);
        targets.insert(3, 0.90);
        let report = success_report(&stats, &targets, 1000);
        assert_eq!(report.rows[0].verdict, Verdict::Pass);
        assert_eq!(report.rows[1].verdict, Verdict::Fail);
        assert_eq!(report.rows[2].verdict, Verdict::InsufficientData);
    }
}
