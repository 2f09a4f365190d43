//! The scenario engine: executes all active merged schedules on the
//! simulated network with tiered dispatch and retries, fans results out per
//! user, meters the ledger, and runs the sniffer with maintenance feedback —
//! one deterministic pass per run.

use super::export::RunSummary;
use super::PlatformError;
use crate::billing::{margin_report, meter, LedgerEntry};
use crate::functions::{Subscription, SubscriptionTarget};
use crate::ids::{DeviceId, SensorKind, Tick};
use crate::lifecycle::MaintenanceCostEntry;
use crate::middleware::{
    aggregate, emit_instructions, fan_out, DeliveredReading, DeliveryKind, DeliveryRecord,
    MergedSchedule, ScheduleKey,
};
use crate::monitor::{
    expected_behavior, maintenance_action, Anomaly, MaintenanceAction, MaintenanceHistory,
    MonitorEngine, MonitorThresholds, ObservedLog,
};
use crate::scenario::ScenarioConfig;
use crate::scheduler::{
    dispatch, execute_with_retries, success_report, DueTask, SuccessReport, SuccessStats, TaskWork,
    TierPolicies,
};
use crate::sim::{EventDetail, EventRecord, Instruction, SimState};
use std::collections::{BTreeMap, BTreeSet};

/// Everything a run produces; the exporter writes it out verbatim.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub events: Vec<EventRecord>,
    pub deliveries: Vec<DeliveryRecord>,
    pub ledger: Vec<LedgerEntry>,
    pub anomalies: Vec<Anomaly>,
    pub maintenance: Vec<MaintenanceCostEntry>,
    pub success: SuccessReport,
}

struct Engine<'a> {
    scenario: &'a ScenarioConfig,
    sim: SimState,
    merged: BTreeMap<ScheduleKey, MergedSchedule>,
    compute_subs: Vec<Subscription>,
    tiers: TierPolicies,
    stats: SuccessStats,
    dispatch_log: Vec<Instruction>,
    agenda: BTreeMap<Tick, Vec<DueTask>>,
    next_task_seq: u64,
    delivered: Vec<DeliveredReading>,
    delivered_keys: BTreeSet<(DeviceId, SensorKind, Tick)>,
    compute_deliveries: Vec<DeliveryRecord>,
    physical_acquisitions: u64,
    starvation_alarms: u64,
    monitor: MonitorEngine,
    history: MaintenanceHistory,
    anomalies: Vec<Anomaly>,
    maintenance: Vec<MaintenanceCostEntry>,
}

pub fn run_scenario(
    scenario: &ScenarioConfig,
    subscriptions: &[Subscription],
    until_tick: Tick,
) -> Result<RunOutcome, PlatformError> {
    let sim = SimState::new(scenario)?;
    let merged = aggregate(subscriptions)?;
    let compute_subs: Vec<Subscription> = subscriptions
        .iter()
        .filter(|s| matches!(s.target, SubscriptionTarget::Compute { .. }))
        .cloned()
        .collect();
    let thresholds = MonitorThresholds {
        consecutive_miss_threshold: scenario.monitor.consecutive_miss_threshold,
        loss_window_ticks: scenario.monitor.loss_window_ticks,
        excess_loss_threshold: scenario.monitor.excess_loss_threshold,
        min_loss_samples: scenario.monitor.min_loss_samples,
    };
    let mut engine = Engine {
        scenario,
        sim,
        merged,
        compute_subs,
        tiers: TierPolicies::from_configs(&scenario.tiers),
        stats: SuccessStats::default(),
        dispatch_log: Vec::new(),
        agenda: BTreeMap::new(),
        next_task_seq: 0,
        delivered: Vec::new(),
        delivered_keys: BTreeSet::new(),
        compute_deliveries: Vec::new(),
        physical_acquisitions: 0,
        starvation_alarms: 0,
        monitor: MonitorEngine::new(thresholds),
        history: MaintenanceHistory::default(),
        anomalies: Vec::new(),
        maintenance: Vec::new(),
    };
    engine.install_initial_schedules()?;
    engine.run(until_tick)?;
    engine.finish(until_tick)
}

impl Engine<'_> {
    fn install_initial_schedules(&mut self) -> Result<(), PlatformError> {
        let instructions = emit_instructions(&self.merged);
        for instr in &instructions {
            self.sim.execute_instruction(instr)?;
        }
        self.dispatch_log.extend(instructions);
        Ok(())
    }

    fn day_ticks(&self) -> Tick {
        86_400_000 / self.scenario.tick_millis
    }

    /// The executing tier of a merged acquisition: the highest-priority
    /// (lowest-numbered) contributor that demands this tick.
    fn tier_for(&self, key: &ScheduleKey, tick: Tick) -> u8 {
        let merged = &self.merged[key];
        merged
            .contributors
            .iter()
            .filter(|s| s.demands(tick))
            .map(|s| s.tier)
            .min()
            .unwrap_or_else(|| {
                merged
                    .contributors
                    .iter()
                    .map(|s| s.tier)
                    .min()
                    .unwrap_or(3)
            })
    }

    fn push_task(&mut self, at: Tick, node: DeviceId, tier: u8, due_tick: Tick, work: TaskWork) {
        let seq = self.next_task_seq;
        self.next_task_seq += 1;
        self.agenda.entry(at).or_default().push(DueTask {
            node,
            tier,
            seq,
            due_tick,
            deferrals: 0,
            work,
        });
    }

    /// Seed the agenda with the chunk's scheduled acquisitions and periodic
    /// compute tasks.
    fn seed_chunk(&mut self, start: Tick, end: Tick) {
        let demands: Vec<(ScheduleKey, Tick)> = self
            .sim
            .schedules()
            .iter()
            .flat_map(|(key, ticks)| {
                ticks
                    .occurrences_in(start, end)
                    .into_iter()
                    .map(move |t| (key.clone(), t))
            })
            .collect();
        for (key, t) in demands {
            let tier = self.tier_for(&key, t);
            self.push_task(
                t,
                key.0.clone(),
                tier,
                t,
                TaskWork::Acquire { sensor: key.1 },
            );
        }
        let computes: Vec<(usize, DeviceId, u8, Tick, Tick)> = self
            .compute_subs
            .iter()
            .enumerate()
            .flat_map(|(index, sub)| {
                let duration = match sub.target {
                    SubscriptionTarget::Compute { duration_ticks } => duration_ticks,
                    _ => unreachable!(),
                };
                let phase = sub.phase();
                let period = sub.period;
                let node = sub.node.clone();
                let tier = sub.tier;
                let first = if start <= phase {
                    phase
                } else {
                    phase + (start - phase).div_ceil(period) * period
                };
                (first..end)
                    .step_by(period as usize)
                    .filter(|t| sub.demands(*t))
                    .map(move |t| (index, node.clone(), tier, t, duration))
                    .collect::<Vec<_>>()
            })
            .collect();
        for (index, node, tier, t, duration) in computes {
            self.push_task(
                t,
                node,
                tier,
                t,
                TaskWork::Compute {
                    duration_ticks: duration,
                    sub_index: index,
                },
            );
        }
    }

    fn run(&mut self, until_tick: Tick) -> Result<(), PlatformError> {
        let chunk = self.scenario.monitor.interval_ticks.max(1);
        let deferral_bound = self.scenario.monitor.starvation_deferral_bound;
        let mut chunk_start = 0;
        let mut prev_window: Option<(Tick, Tick)> = None;
        while chunk_start < until_tick {
            let chunk_end = (chunk_start + chunk).min(until_tick);
            self.seed_chunk(chunk_start, chunk_end);
            while let Some((&tick, _)) = self.agenda.iter().next() {
                if tick >= chunk_end {
                    break;
                }
                let due = self.agenda.remove(&tick).unwrap();
                self.sim.step(tick);
                let outcome = dispatch(tick, due, deferral_bound);
                for alarm in &outcome.alarms {
                    self.starvation_alarms += 1;
                    self.sim.log_event(
                        Some(alarm.node.clone()),
                        EventDetail::StarvationAlarm {
                            tier: alarm.tier,
                            deferrals: alarm.deferrals,
                        },
                    );
                }
                for task in outcome.execute {
                    self.execute_task(tick, task)?;
                }
                for deferred in outcome.deferred {
                    self.agenda.entry(tick + 1).or_default().push(deferred);
                }
            }
            self.sim.step(chunk_end);
            // The sniffer lags one interval so deferred deliveries settle
            // before their window is judged.
            if let Some(window) = prev_window {
                self.monitor_pass(window)?;
            }
            prev_window = Some((chunk_start, chunk_end));
            chunk_start = chunk_end;
        }
        if let Some(window) = prev_window {
            self.monitor_pass(window)?;
        }
        Ok(())
    }

    fn execute_task(&mut self, tick: Tick, task: DueTask) -> Result<(), PlatformError> {
        match task.work.clone() {
            TaskWork::Acquire { sensor } => self.execute_acquire(tick, &task, sensor),
            TaskWork::Actuate { actuator, value } => {
                let ok = self
                    .sim
                    .execute_instruction(&Instruction::Control {
                        node: task.node.clone(),
                        actuator,
                        value,
                    })
                    .is_ok();
                self.stats.record(task.tier, ok);
                Ok(())
            }
            TaskWork::Compute {
                duration_ticks,
                sub_index,
            } => {
                self.sim.execute_instruction(&Instruction::ComputeTask {
                    node: task.node.clone(),
                    duration_ticks,
                })?;
                self.stats.record(task.tier, true);
                // A completed compute invocation is a billable delivery of
                // its own, attributed to the subscription that demanded it.
                let sub = &self.compute_subs[sub_index];
                self.compute_deliveries.push(DeliveryRecord {
                    function_id: sub.function_id.clone(),
                    user: sub.user.clone(),
                    tier: sub.tier,
                    node: task.node.clone(),
                    sensor: SensorKind::new("compute"),
                    demand_tick: task.due_tick,
                    delivered_tick: tick,
                    kind: DeliveryKind::Compute,
                    billed_units: 1,
                });
                Ok(())
            }
        }
    }

    fn execute_acquire(
        &mut self,
        tick: Tick,
        task: &DueTask,
        sensor: SensorKind,
    ) -> Result<(), PlatformError> {
        let reading = match self.sim.collect(&task.node, &sensor) {
            Ok(reading) => reading,
            Err(crate::sim::SimError::DeadNode(_)) => {
                // The acquisition never happened; the tier failed to serve
                // this task.
                self.stats.record(task.tier, false);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        self.physical_acquisitions += 1;
        let path = self.sim.topology().path_to_gateway(&task.node)?;
        let policy = self
            .tiers
            .get(task.tier)
            .expect("scenario validation guarantees tiers 1..=3");
        let sim = &mut self.sim;
        let result = execute_with_retries(
            policy,
            || {
                sim.transmit(&path)
                    .map(|o| o.is_delivered())
                    .unwrap_or(false)
            },
            &mut self.stats,
        );
        if !result.is_success() {
            return Ok(());
        }
        self.sim.log_event(
            Some(task.node.clone()),
            EventDetail::Delivery {
                sensor: sensor.clone(),
                demand_tick: task.due_tick,
                value: reading.value,
                fired: reading.fired.clone(),
                tier: task.tier,
            },
        );
        self.delivered.push(DeliveredReading {
            node: task.node.clone(),
            sensor: sensor.clone(),
            demand_tick: task.due_tick,
            delivered_tick: tick,
            value: reading.value,
        });
        self.delivered_keys
            .insert((task.node.clone(), sensor.clone(), task.due_tick));

        // Control rules fire on delivered readings: queue the actuations for
        // the next tick at the rule's own tier.
        let key = (task.node.clone(), sensor);
        if let Some(merged) = self.merged.get(&key) {
            let day = self.day_ticks();
            let mut actions = Vec::new();
            for sub in &merged.contributors {
                let Some(control) = &sub.control_action else {
                    continue;
                };
                if !sub.demands(task.due_tick) {
                    continue;
                }
                let threshold = sub.threshold.expect("control subscription has threshold");
                if !threshold.holds(reading.value) {
                    continue;
                }
                if let Some(guard) = &sub.time_of_day {
                    if !guard.holds(task.due_tick, day) {
                        continue;
                    }
                }
                for (target, actuator) in &control.targets {
                    actions.push((target.clone(), sub.tier, actuator.clone(), control.value));
                }
            }
            for (target, tier, actuator, value) in actions {
                self.push_task(
                    tick + 1,
                    target,
                    tier,
                    tick + 1,
                    TaskWork::Actuate { actuator, value },
                );
            }
        }
        Ok(())
    }

    fn monitor_pass(&mut self, window: (Tick, Tick)) -> Result<(), PlatformError> {
        let expected = expected_behavior(&self.dispatch_log, window);
        let observed = ObservedLog {
            window,
            deliveries: self
                .delivered_keys
                .iter()
                .filter(|(_, _, t)| *t >= window.0 && *t < window.1)
                .cloned()
                .collect(),
        };
        let anomalies = self.monitor.observe_window(&expected, &observed);
        for anomaly in anomalies {
            let action = maintenance_action(&anomaly, &self.history, self.sim.tick());
            self.anomalies.push(anomaly);
            let Some(action) = action else { continue };
            self.apply_action(&action)?;
        }
        Ok(())
    }

    fn apply_action(&mut self, action: &MaintenanceAction) -> Result<(), PlatformError> {
        let now = self.sim.tick();
        match action {
            MaintenanceAction::Restart { node } => {
                self.sim.restart(node)?;
                self.reinstall_node(node)?;
                let confirm = self.confirm_window(node);
                self.history.record_restart(node, now, now + confirm);
                // The next miss confirms the restart failed and escalates.
                self.monitor.arm_confirmation(node);
            }
            MaintenanceAction::FieldReplace { node } => {
                self.sim.field_replace(node)?;
                self.reinstall_node(node)?;
                self.history.clear(node);
                // Stale misses diffed after the swap stay inside the closed
                // episode; the next delivery clears it.
            }
            MaintenanceAction::ChannelRescan { node } => {
                let path = self.sim.topology().path_to_gateway(node)?;
                let gateway = path.last().expect("path is nonempty").clone();
                self.sim
                    .execute_instruction(&Instruction::ScanChannels { gateway })?;
            }
        }
        if let Some(level) = action.cost_level() {
            let cost = self.scenario.maintenance.base_cost
                * self.scenario.maintenance.level_multipliers[usize::from(level - 1)];
            self.sim.log_event(
                Some(action.node().clone()),
                EventDetail::MaintenancePosted {
                    action: action.name().to_owned(),
                    level,
                    cost,
                },
            );
            self.maintenance.push(MaintenanceCostEntry {
                tick: now,
                node: action.node().clone(),
                action: action.name().to_owned(),
                level,
                cost,
            });
        }
        Ok(())
    }

    /// Re-emit the merged schedule and thresholds for every sensor of one
    /// node (after a restart or replacement wiped its installed state).
    fn reinstall_node(&mut self, node: &DeviceId) -> Result<(), PlatformError> {
        let mine: BTreeMap<ScheduleKey, MergedSchedule> = self
            .merged
            .iter()
            .filter(|((n, _), _)| n == node)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let instructions = emit_instructions(&mine);
        for instr in &instructions {
            self.sim.execute_instruction(instr)?;
        }
        self.dispatch_log.extend(instructions);
        Ok(())
    }

    /// Confirmation window after a restart: a NodeSilent recurrence within
    /// this many ticks escalates to field replacement.
    fn confirm_window(&self, node: &DeviceId) -> Tick {
        let period = self
            .merged
            .iter()
            .filter(|((n, _), _)| n == node)
            .map(|(_, m)| m.ticks.hyperperiod)
            .max()
            .unwrap_or(self.scenario.monitor.interval_ticks);
        self.scenario.monitor.restart_confirm_factor * period
    }

    fn finish(mut self, until_tick: Tick) -> Result<RunOutcome, PlatformError> {
        let day = self.day_ticks();
        let mut deliveries = fan_out(&self.delivered, &self.merged, day)?;
        deliveries.append(&mut self.compute_deliveries);
        deliveries.sort_by(|a, b| {
            (a.demand_tick, &a.node, &a.sensor, &a.function_id).cmp(&(
                b.demand_tick,
                &b.node,
                &b.sensor,
                &b.function_id,
            ))
        });
        let rates = self.tiers.rates();
        let mut ledger = Vec::with_capacity(deliveries.len());
        for record in &deliveries {
            ledger.push(meter(record, &rates)?);
        }
        let margin = margin_report(&ledger, self.physical_acquisitions);
        let success = success_report(
            &self.stats,
            &self.tiers.targets(),
            self.scenario.monitor.min_success_samples,
        );
        let maintenance_total = self.maintenance.iter().fold(0.0, |acc, e| acc + e.cost);
        let revenue = ledger.iter().map(|e| e.amount).sum();
        let summary = RunSummary {
            until_tick,
            seed: self.scenario.seed,
            devices: self.sim.topology().devices.len(),
            physical_acquisitions: margin.physical_acquisitions,
            billed_units: margin.billed_units,
            margin_units: margin.margin_units,
            revenue,
            delivery_records: deliveries.len() as u64,
            anomalies: self.anomalies.len() as u64,
            maintenance_actions: self.maintenance.len() as u64,
            maintenance_cost: maintenance_total,
            starvation_alarms: self.starvation_alarms,
            success: success.clone(),
        };
        Ok(RunOutcome {
            summary,
            events: self.sim.log().to_vec(),
            deliveries,
            ledger,
            anomalies: self.anomalies,
            maintenance: self.maintenance,
            success,
        })
    }
}
