//! End-to-end platform behavior: submission pipeline, atomic rejection,
//! scenario runs, result isolation, invoices, exports, and the maintenance
//! feedback loop.

use sensornet_core::billing::Currency;
use sensornet_core::monitor::AnomalyKind;
use sensornet_core::platform::store::FunctionStatus;
use sensornet_core::platform::{Command, CommandOutput, Platform, PlatformError};
use sensornet_core::scenario::{DeviceConfig, ScenarioConfig};
use sensornet_core::{DeviceId, FunctionId, UserId};

fn small_scenario() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.seed = 42;
    cfg.devices = DeviceConfig {
        edge: 2,
        infrastructure: 4,
        constrained: 10,
        gateways: 1,
        relay_fraction: 0.0,
        ..DeviceConfig::default()
    };
    cfg.channels.loss_rate = 0.0;
    cfg
}

const COLLECT: &str = r#"
id = "collect-5min"
tier = 2
[periodic_collect]
selector = "class:constrained with:pm25"
sensor = "pm25"
period_ticks = 3000
"#;

const ALERT: &str = r#"
id = "alert-10min"
tier = 3
[threshold_alert]
selector = "class:constrained with:pm25"
sensor = "pm25"
period_ticks = 6000
comparator = ">="
threshold = 40.0
"#;

fn submit(platform: &mut Platform, text: &str, user: &str) -> Result<FunctionId, PlatformError> {
    match platform.process(Command::SubmitFunction {
        spec_text: text.to_owned(),
        user: UserId::new(user),
    })? {
        CommandOutput::Submitted { id, .. } => Ok(id),
        other => panic!("unexpected output {other:?}"),
    }
}

#[test]
fn submit_run_query_invoice_flow() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    submit(&mut platform, COLLECT, "ann").unwrap();
    submit(&mut platform, ALERT, "bob").unwrap();

    // One simulated hour, lossless.
    let summary = platform.run_scenario(36_000, None).unwrap();
    // 12 five-minute ticks per node, 10 nodes.
    assert_eq!(summary.physical_acquisitions, 120);
    // ann gets every acquisition; bob only threshold crossings on his
    // 10-minute ticks (6000 and 24000 cross at pm25's defaults).
    let ann = platform
        .query_results(&UserId::new("ann"), 0, 36_000)
        .unwrap();
    assert_eq!(ann.len(), 120);
    let bob = platform
        .query_results(&UserId::new("bob"), 0, 36_000)
        .unwrap();
    assert_eq!(bob.len(), 20);
    assert!(bob.iter().all(|r| r.demand_tick % 6000 == 0));
    assert_eq!(summary.billed_units, 140);
    assert_eq!(summary.margin_units, 20);
    assert_eq!(summary.anomalies, 0);

    // Isolation: no record of one user ever shows up for the other.
    assert!(ann.iter().all(|r| r.user == UserId::new("ann")));
    assert!(bob.iter().all(|r| r.user == UserId::new("bob")));

    // Invoices: exact fixed-point arithmetic.
    let ann_invoice = platform
        .query_invoice(&UserId::new("ann"), 0, 36_000)
        .unwrap();
    assert_eq!(ann_invoice.total, Currency::from_str("0.24").unwrap());
    let bob_invoice = platform
        .query_invoice(&UserId::new("bob"), 0, 36_000)
        .unwrap();
    assert_eq!(bob_invoice.total, Currency::from_str("0.01").unwrap());

    // A user with no functions simply has no records.
    let carol = platform
        .query_results(&UserId::new("carol"), 0, 36_000)
        .unwrap();
    assert!(carol.is_empty());
}

#[test]
fn rejected_submissions_leave_no_trace_beyond_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_scenario();
    cfg.capacity.max_acq_per_minute = 2;
    let mut platform = Platform::init(dir.path(), cfg).unwrap();
    submit(&mut platform, COLLECT, "ann").unwrap();
    let active_before: Vec<_> = platform
        .store()
        .active_records()
        .iter()
        .map(|r| r.id.clone())
        .collect();
    let subs_before = platform.active_subscriptions().unwrap();

    // Every 100 ticks = 6 per minute > W=2 per minute on those nodes.
    let overload = r#"
id = "too-fast"
tier = 1
[periodic_collect]
selector = "class:constrained with:pm25"
sensor = "pm25"
period_ticks = 100
"#;
    let err = submit(&mut platform, overload, "eve").unwrap_err();
    assert!(matches!(err, PlatformError::Capacity(_)));
    assert_eq!(err.exit_code(), 3);

    // The rejected function is stored with its reason; nothing else moved.
    match &platform
        .store()
        .get(&FunctionId::new("too-fast"))
        .unwrap()
        .status
    {
        FunctionStatus::Rejected { reasons } => assert!(!reasons.is_empty()),
        other => panic!("expected rejection, got {other:?}"),
    }
    let active_after: Vec<_> = platform
        .store()
        .active_records()
        .iter()
        .map(|r| r.id.clone())
        .collect();
    assert_eq!(active_before, active_after);
    assert_eq!(subs_before, platform.active_subscriptions().unwrap());
}

#[test]
fn malformed_text_stored_as_rejected_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    let err = submit(&mut platform, "this is { not toml", "eve").unwrap_err();
    assert!(matches!(err, PlatformError::Parse(_)));
    assert_eq!(err.exit_code(), 2);
    let rejected: Vec<_> = platform
        .store()
        .active_records()
        .iter()
        .map(|r| r.id.clone())
        .collect();
    assert!(rejected.is_empty());
    // The store retains the rejected document under a synthetic id.
    assert!(platform.store().knows_user(&UserId::new("eve")));
}

#[test]
fn duplicate_function_ids_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    submit(&mut platform, COLLECT, "ann").unwrap();
    let err = submit(&mut platform, COLLECT, "ann").unwrap_err();
    assert!(matches!(err, PlatformError::DuplicateFunction(_)));
}

#[test]
fn validation_violations_reported_and_stored() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_scenario();
    cfg.limits.max_functions_per_user = 1;
    let mut platform = Platform::init(dir.path(), cfg).unwrap();
    submit(&mut platform, COLLECT, "ann").unwrap();
    let err = submit(&mut platform, ALERT, "ann").unwrap_err();
    match &err {
        PlatformError::Validation(violations) => assert_eq!(violations.len(), 1),
        other => panic!("expected validation error, got {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn cancellation_shrinks_the_physical_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    submit(&mut platform, COLLECT, "ann").unwrap();
    submit(&mut platform, ALERT, "bob").unwrap();
    let with_both = platform.run_scenario(36_000, None).unwrap();
    platform
        .process(Command::CancelFunction {
            id: FunctionId::new("collect-5min"),
        })
        .unwrap();
    let alert_only = platform.run_scenario(36_000, None).unwrap();
    // Without the 5-minute collector, only the 10-minute alert ticks remain.
    assert_eq!(with_both.physical_acquisitions, 120);
    assert_eq!(alert_only.physical_acquisitions, 60);
    // bob's own deliveries are unchanged by the merge change.
    let bob = platform
        .query_results(&UserId::new("bob"), 0, 36_000)
        .unwrap();
    assert_eq!(bob.len(), 20);
}

#[test]
fn reruns_with_same_seed_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    submit(&mut platform, COLLECT, "ann").unwrap();
    submit(&mut platform, ALERT, "bob").unwrap();
    platform.run_scenario(36_000, None).unwrap();
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    let first: Vec<(String, Vec<u8>)> = [
        "ledger.csv",
        "deliveries.ndjson",
        "anomalies.ndjson",
        "events.ndjson",
        "maintenance.ndjson",
        "summary.json",
    ]
    .iter()
    .map(|n| (n.to_string(), read(n)))
    .collect();
    platform.run_scenario(36_000, None).unwrap();
    for (name, bytes) in &first {
        assert_eq!(&read(name), bytes, "{name} differs between runs");
    }
    // A different seed produces a different event stream.
    platform.run_scenario(36_000, Some(777)).unwrap();
    assert_ne!(&read("events.ndjson"), &first[3].1);
}

#[test]
fn dead_node_is_restarted_then_field_replaced_and_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_scenario();
    // n0 can afford exactly 3 acquisitions (0.001 collect + 0.002 one-hop
    // transmit each); it goes silent from its 4th scheduled tick.
    cfg.energy.overrides.insert("n0".into(), 0.009);
    let mut platform = Platform::init(dir.path(), cfg).unwrap();
    let fast = r#"
id = "fast-collect"
tier = 2
[periodic_collect]
selector = "class:constrained with:pm25"
sensor = "pm25"
period_ticks = 600
"#;
    submit(&mut platform, fast, "ann").unwrap();
    let summary = platform.run_scenario(36_000, None).unwrap();

    let anomalies = platform.monitor_report(0, 36_000).unwrap();
    let silences: Vec<_> = anomalies
        .iter()
        .filter(|a| {
            a.node == DeviceId::new("n0") && matches!(a.kind, AnomalyKind::NodeSilent { .. })
        })
        .collect();
    assert!(silences.len() >= 2, "restart + escalation: {anomalies:?}");

    // Maintenance escalated from restart (level 1) to field replace (level
    // 3), in that order, and posted both costs.
    let maintenance = std::fs::read_to_string(dir.path().join("maintenance.ndjson")).unwrap();
    let actions: Vec<serde_json::Value> = maintenance
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let n0_actions: Vec<&str> = actions
        .iter()
        .filter(|a| a["node"] == "n0")
        .map(|a| a["action"].as_str().unwrap())
        .collect();
    assert_eq!(n0_actions, vec!["restart", "field_replace"]);
    assert!(summary.maintenance_cost >= 10.0 + 90.0);

    // After replacement the node delivers again: its records resume later in
    // the run.
    let ann = platform
        .query_results(&UserId::new("ann"), 0, 36_000)
        .unwrap();
    let n0_ticks: Vec<u64> = ann
        .iter()
        .filter(|r| r.node == DeviceId::new("n0"))
        .map(|r| r.demand_tick)
        .collect();
    assert!(
        n0_ticks.iter().any(|t| *t >= 10_000),
        "no recovery: {n0_ticks:?}"
    );
}

#[test]
fn control_rule_drives_actuators_on_trigger() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    // Temperature baseline 20, amplitude 5: crosses 24 within the first
    // quarter period of an hour-long sine.
    let control = r#"
id = "lane-control"
tier = 1
[control_rule.condition]
node = "n1"
sensor = "temperature"
comparator = ">="
value = 24.0
period_ticks = 600
[control_rule.action]
selector = "class:edge"
actuator = "lane_sign"
value = 1.0
"#;
    submit(&mut platform, control, "city").unwrap();
    platform.run_scenario(36_000, None).unwrap();
    let events = std::fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
    let actuations = events
        .lines()
        .filter(|l| l.contains("\"kind\":\"actuator_set\""))
        .count();
    // Two edge devices per trigger, many triggering ticks in the hour.
    assert!(actuations > 0, "no actuations in event log");
    assert_eq!(actuations % 2, 0);
    // The alert deliveries for the rule owner were billed at tier 1.
    let city = platform
        .query_results(&UserId::new("city"), 0, 36_000)
        .unwrap();
    assert!(!city.is_empty());
    assert!(city.iter().all(|r| r.tier == 1));
}

#[test]
fn empty_store_runs_idle() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    let summary = platform.run_scenario(10_000, None).unwrap();
    assert_eq!(summary.physical_acquisitions, 0);
    assert_eq!(summary.billed_units, 0);
    assert_eq!(summary.revenue, Currency::ZERO);
    // Header-only ledger export.
    let ledger = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 1);
}

#[test]
fn platform_reopens_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
        submit(&mut platform, COLLECT, "ann").unwrap();
    }
    let mut reopened = Platform::open(dir.path()).unwrap();
    let summary = reopened.run_scenario(6000, None).unwrap();
    assert_eq!(summary.physical_acquisitions, 20);
    assert!(Platform::open(&dir.path().join("nope")).is_err());
}

#[test]
fn edge_compute_tasks_occupy_devices_and_bill_per_invocation() {
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    let edge = r#"
id = "stats-10min"
tier = 3
[edge_compute]
selector = "class:edge"
duration_ticks = 50
period_ticks = 6000
"#;
    submit(&mut platform, edge, "lab").unwrap();
    let summary = platform.run_scenario(36_000, None).unwrap();
    // No sensor acquisitions at all; 2 edge devices x 6 periods billed.
    assert_eq!(summary.physical_acquisitions, 0);
    assert_eq!(summary.billed_units, 12);
    let lab = platform
        .query_results(&UserId::new("lab"), 0, 36_000)
        .unwrap();
    assert_eq!(lab.len(), 12);
    assert!(lab.iter().all(|r| r.tier == 3));
    let invoice = platform
        .query_invoice(&UserId::new("lab"), 0, 36_000)
        .unwrap();
    assert_eq!(invoice.total, Currency::from_str("0.006").unwrap());
    // Compute starts and completions appear in the event log.
    let events = std::fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
    assert_eq!(events.matches("\"kind\":\"compute_started\"").count(), 12);
    assert_eq!(events.matches("\"kind\":\"compute_done\"").count(), 12);
}

#[test]
fn same_node_sensor_contention_defers_within_the_slot_model() {
    // Two sensors on one node scheduled at the same ticks: one acquisition
    // slot per node-tick, so the second sensor runs one tick late but still
    // serves its original demand tick.
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    let pm = r#"
id = "pm"
tier = 2
[periodic_collect]
selector = "id:n2"
sensor = "pm25"
period_ticks = 600
"#;
    let temp = r#"
id = "temp"
tier = 2
[periodic_collect]
selector = "id:n2"
sensor = "temperature"
period_ticks = 600
"#;
    submit(&mut platform, pm, "ann").unwrap();
    submit(&mut platform, temp, "bob").unwrap();
    let summary = platform.run_scenario(6000, None).unwrap();
    assert_eq!(summary.physical_acquisitions, 20);
    assert_eq!(summary.starvation_alarms, 0);
    assert_eq!(summary.anomalies, 0);

    let ann = platform
        .query_results(&UserId::new("ann"), 0, 6000)
        .unwrap();
    let bob = platform
        .query_results(&UserId::new("bob"), 0, 6000)
        .unwrap();
    assert_eq!(ann.len(), 10);
    assert_eq!(bob.len(), 10);
    // FIFO within the tier: pm25 keeps the slot, temperature defers by one
    // tick, and both are attributed to the demanded tick.
    assert!(ann.iter().all(|r| r.delivered_tick == r.demand_tick));
    assert!(bob.iter().all(|r| r.delivered_tick == r.demand_tick + 1));
}

#[test]
fn excess_loss_triggers_channel_rescan_and_recovery() {
    // Channel 0 is busy and lossy; channel 1 is clean. The sniffer should
    // notice the miss rate, recommend a rescan, and the gateway should hop
    // to the clean channel.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_scenario();
    cfg.channels.count = 2;
    cfg.channels.interference = Some(vec![0.9, 0.1]);
    cfg.channels.loss_rates = Some(vec![0.45, 0.0]);
    let mut platform = Platform::init(dir.path(), cfg).unwrap();
    let fast = r#"
id = "minute-collect"
tier = 3
[periodic_collect]
selector = "class:constrained with:pm25"
sensor = "pm25"
period_ticks = 600
"#;
    submit(&mut platform, fast, "ann").unwrap();
    let summary = platform.run_scenario(36_000, None).unwrap();
    assert!(summary.anomalies > 0);

    let events = std::fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
    let switched: Vec<serde_json::Value> = events
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["kind"] == "channel_switched")
        .collect();
    assert!(!switched.is_empty(), "no channel rescan happened");
    assert!(switched.iter().all(|v| v["channel"] == 1));
    let switch_tick = switched[0]["tick"].as_u64().unwrap();

    // After the hop the channel is lossless: the tail of the run delivers
    // every demanded tick.
    let ann = platform
        .query_results(&UserId::new("ann"), 0, 36_000)
        .unwrap();
    let tail_start = switch_tick.div_ceil(600) * 600 + 600;
    let tail: Vec<_> = ann.iter().filter(|r| r.demand_tick >= tail_start).collect();
    let expected_tail = (36_000 - tail_start) / 600 * 10;
    assert_eq!(tail.len() as u64, expected_tail);
}

#[test]
fn overlapping_compute_functions_bill_their_own_invocations() {
    // Two compute functions with identical phase on the same edge devices:
    // each owner pays for its own invocations, one per demanded tick.
    let dir = tempfile::tempdir().unwrap();
    let mut platform = Platform::init(dir.path(), small_scenario()).unwrap();
    for (id, user) in [("stats-a", "lab-a"), ("stats-b", "lab-b")] {
        let doc = format!(
            "id = \"{id}\"\ntier = 3\n[edge_compute]\nselector = \"id:e0\"\nduration_ticks = 5\nperiod_ticks = 6000\n"
        );
        submit(&mut platform, &doc, user).unwrap();
    }
    let summary = platform.run_scenario(36_000, None).unwrap();
    assert_eq!(summary.billed_units, 12);
    for user in ["lab-a", "lab-b"] {
        let records = platform
            .query_results(&UserId::new(user), 0, 36_000)
            .unwrap();
        assert_eq!(records.len(), 6, "{user}");
        assert!(records.iter().all(|r| r.user == UserId::new(user)));
    }
}
