//! Concrete syntax for function documents: TOML, one function per document.
//!
//! Top level: `id`, `tier`, optional `user`, plus exactly one kind table —
//! `[periodic_collect]`, `[threshold_alert]`, `[control_rule]` or
//! `[edge_compute]`. See `samples/` in the repository for worked examples.
//!
//! Parsing is total: any input produces either a spec or an error locating
//! the first defect. The document is walked by hand so that unknown fields
//! and unknown kinds get their own error classes instead of generic serde
//! messages.

use super::selector::Selector;
use super::{ActuatorAction, Condition, FunctionKind, FunctionSpec, TimeOfDayGuard};
use crate::ids::{ActuatorKind, DeviceId, FunctionId, SensorKind, Tick, UserId};
use crate::sim::Comparator;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("unknown function kind: {0}")]
    UnknownKind(String),
}

impl ParseError {
    fn at(position: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax {
            position,
            message: message.into(),
        }
    }

    fn missing(field: &str) -> Self {
        ParseError::at(0, format!("missing field `{field}`"))
    }

    fn bad(field: &str, message: impl std::fmt::Display) -> Self {
        ParseError::at(0, format!("field `{field}`: {message}"))
    }
}

const KIND_TABLES: [&str; 4] = [
    "periodic_collect",
    "threshold_alert",
    "control_rule",
    "edge_compute",
];

/// Parse one function document.
pub fn parse_function(text: &str) -> Result<FunctionSpec, ParseError> {
    let table: Table = toml::from_str(text).map_err(|e| {
        let position = e.span().map(|s| s.start).unwrap_or(0);
        ParseError::at(position, e.message().to_owned())
    })?;

    for key in table.keys() {
        if key != "id" && key != "user" && key != "tier" && !KIND_TABLES.contains(&key.as_str()) {
            return Err(ParseError::UnknownField(key.clone()));
        }
    }

    let id = FunctionId::new(req_str(&table, "id")?);
    let user = UserId::new(opt_str(&table, "user")?.unwrap_or_default());
    let tier = req_int(&table, "tier")?;
    if !(1..=3).contains(&tier) {
        return Err(ParseError::bad("tier", "must be 1, 2 or 3"));
    }
    let tier = tier as u8;

    let present: Vec<&str> = KIND_TABLES
        .iter()
        .copied()
        .filter(|k| table.contains_key(*k))
        .collect();
    let kind_name = match present.as_slice() {
        [one] => *one,
        [] => return Err(ParseError::UnknownKind("no kind table present".into())),
        many => {
            return Err(ParseError::UnknownKind(format!(
                "multiple kind tables present: {}",
                many.join(", ")
            )))
        }
    };
    let kind_table = sub_table(&table, kind_name)?;

    let kind = match kind_name {
        "periodic_collect" => {
            check_fields(
                kind_table,
                kind_name,
                &[
                    "selector",
                    "sensor",
                    "period_ticks",
                    "anchor_ticks",
                    "window_ticks",
                ],
            )?;
            FunctionKind::PeriodicCollect {
                selector: req_selector(kind_table, "selector")?,
                sensor: SensorKind::new(req_str(kind_table, "sensor")?),
                period_ticks: req_int(kind_table, "period_ticks")? as Tick,
                anchor_ticks: opt_int(kind_table, "anchor_ticks")?.unwrap_or(0) as Tick,
                window_ticks: opt_int(kind_table, "window_ticks")?.map(|v| v as Tick),
            }
        }
        "threshold_alert" => {
            check_fields(
                kind_table,
                kind_name,
                &[
                    "selector",
                    "sensor",
                    "period_ticks",
                    "anchor_ticks",
                    "comparator",
                    "threshold",
                ],
            )?;
            FunctionKind::ThresholdAlert {
                selector: req_selector(kind_table, "selector")?,
                sensor: SensorKind::new(req_str(kind_table, "sensor")?),
                period_ticks: req_int(kind_table, "period_ticks")? as Tick,
                anchor_ticks: opt_int(kind_table, "anchor_ticks")?.unwrap_or(0) as Tick,
                comparator: req_comparator(kind_table, "comparator")?,
                threshold: req_float(kind_table, "threshold")?,
            }
        }
        "control_rule" => {
            check_fields(kind_table, kind_name, &["condition", "action"])?;
            let cond = sub_table(kind_table, "condition")?;
            check_fields(
                cond,
                "condition",
                &[
                    "node",
                    "sensor",
                    "comparator",
                    "value",
                    "period_ticks",
                    "anchor_ticks",
                    "time_of_day",
                ],
            )?;
            let time_of_day = match cond.get("time_of_day") {
                None => None,
                Some(Value::Table(t)) => {
                    check_fields(t, "time_of_day", &["start_tick", "end_tick"])?;
                    Some(TimeOfDayGuard {
                        start_tick: req_int(t, "start_tick")? as Tick,
                        end_tick: req_int(t, "end_tick")? as Tick,
                    })
                }
                Some(_) => return Err(ParseError::bad("time_of_day", "expected a table")),
            };
            let action = sub_table(kind_table, "action")?;
            check_fields(action, "action", &["selector", "actuator", "value"])?;
            FunctionKind::ControlRule {
                condition: Condition {
                    node: DeviceId::new(req_str(cond, "node")?),
                    sensor: SensorKind::new(req_str(cond, "sensor")?),
                    comparator: req_comparator(cond, "comparator")?,
                    value: req_float(cond, "value")?,
                    period_ticks: req_int(cond, "period_ticks")? as Tick,
                    anchor_ticks: opt_int(cond, "anchor_ticks")?.unwrap_or(0) as Tick,
                    time_of_day,
                },
                action: ActuatorAction {
                    selector: req_selector(action, "selector")?,
                    actuator: ActuatorKind::new(req_str(action, "actuator")?),
                    value: req_float(action, "value")?,
                },
            }
        }
        "edge_compute" => {
            check_fields(
                kind_table,
                kind_name,
                &["selector", "duration_ticks", "period_ticks", "anchor_ticks"],
            )?;
            FunctionKind::EdgeCompute {
                selector: req_selector(kind_table, "selector")?,
                duration_ticks: req_int(kind_table, "duration_ticks")? as Tick,
                period_ticks: req_int(kind_table, "period_ticks")? as Tick,
                anchor_ticks: opt_int(kind_table, "anchor_ticks")?.unwrap_or(0) as Tick,
            }
        }
        _ => unreachable!(),
    };

    Ok(FunctionSpec {
        id,
        user,
        tier,
        kind,
    })
}

/// Render a spec back to its document form; `parse(serialize(s)) == s`.
pub fn serialize_function(spec: &FunctionSpec) -> String {
    let mut root = Table::new();
    root.insert("id".into(), Value::String(spec.id.0.clone()));
    if !spec.user.as_str().is_empty() {
        root.insert("user".into(), Value::String(spec.user.0.clone()));
    }
    root.insert("tier".into(), Value::Integer(i64::from(spec.tier)));

    let mut t = Table::new();
    let kind_name = match &spec.kind {
        FunctionKind::PeriodicCollect {
            selector,
            sensor,
            period_ticks,
            anchor_ticks,
            window_ticks,
        } => {
            t.insert("selector".into(), Value::String(selector.canonical()));
            t.insert("sensor".into(), Value::String(sensor.0.clone()));
            t.insert("period_ticks".into(), Value::Integer(*period_ticks as i64));
            if *anchor_ticks != 0 {
                t.insert("anchor_ticks".into(), Value::Integer(*anchor_ticks as i64));
            }
            if let Some(w) = window_ticks {
                t.insert("window_ticks".into(), Value::Integer(*w as i64));
            }
            "periodic_collect"
        }
        FunctionKind::ThresholdAlert {
            selector,
            sensor,
            period_ticks,
            anchor_ticks,
            comparator,
            threshold,
        } => {
            t.insert("selector".into(), Value::String(selector.canonical()));
            t.insert("sensor".into(), Value::String(sensor.0.clone()));
            t.insert("period_ticks".into(), Value::Integer(*period_ticks as i64));
            if *anchor_ticks != 0 {
                t.insert("anchor_ticks".into(), Value::Integer(*anchor_ticks as i64));
            }
            t.insert(
                "comparator".into(),
                Value::String(comparator.symbol().into()),
            );
            t.insert("threshold".into(), Value::Float(*threshold));
            "threshold_alert"
        }
        FunctionKind::ControlRule { condition, action } => {
            let mut cond = Table::new();
            cond.insert("node".into(), Value::String(condition.node.0.clone()));
            cond.insert("sensor".into(), Value::String(condition.sensor.0.clone()));
            cond.insert(
                "comparator".into(),
                Value::String(condition.comparator.symbol().into()),
            );
            cond.insert("value".into(), Value::Float(condition.value));
            cond.insert(
                "period_ticks".into(),
                Value::Integer(condition.period_ticks as i64),
            );
            if condition.anchor_ticks != 0 {
                cond.insert(
                    "anchor_ticks".into(),
                    Value::Integer(condition.anchor_ticks as i64),
                );
            }
            if let Some(g) = &condition.time_of_day {
                let mut guard = Table::new();
                guard.insert("start_tick".into(), Value::Integer(g.start_tick as i64));
                guard.insert("end_tick".into(), Value::Integer(g.end_tick as i64));
                cond.insert("time_of_day".into(), Value::Table(guard));
            }
            let mut act = Table::new();
            act.insert(
                "selector".into(),
                Value::String(action.selector.canonical()),
            );
            act.insert("actuator".into(), Value::String(action.actuator.0.clone()));
            act.insert("value".into(), Value::Float(action.value));
            t.insert("condition".into(), Value::Table(cond));
            t.insert("action".into(), Value::Table(act));
            "control_rule"
        }
        FunctionKind::EdgeCompute {
            selector,
            duration_ticks,
            period_ticks,
            anchor_ticks,
        } => {
            t.insert("selector".into(), Value::String(selector.canonical()));
            t.insert(
                "duration_ticks".into(),
                Value::Integer(*duration_ticks as i64),
            );
            t.insert("period_ticks".into(), Value::Integer(*period_ticks as i64));
            if *anchor_ticks != 0 {
                t.insert("anchor_ticks".into(), Value::Integer(*anchor_ticks as i64));
            }
            "edge_compute"
        }
    };
    root.insert(kind_name.into(), Value::Table(t));
    toml::to_string(&root).expect("function table serializes")
}

fn check_fields(table: &Table, context: &str, allowed: &[&str]) -> Result<(), ParseError> {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(ParseError::UnknownField(format!("{context}.{key}")));
        }
    }
    Ok(())
}

fn sub_table<'a>(table: &'a Table, field: &str) -> Result<&'a Table, ParseError> {
    match table.get(field) {
        Some(Value::Table(t)) => Ok(t),
        Some(_) => Err(ParseError::bad(field, "expected a table")),
        None => Err(ParseError::missing(field)),
    }
}

fn req_str(table: &Table, field: &str) -> Result<String, ParseError> {
    opt_str(table, field)?.ok_or_else(|| ParseError::missing(field))
}

fn opt_str(table: &Table, field: &str) -> Result<Option<String>, ParseError> {
    match table.get(field) {
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ParseError::bad(field, "expected a string")),
        None => Ok(None),
    }
}

fn req_int(table: &Table, field: &str) -> Result<u64, ParseError> {
    opt_int(table, field)?.ok_or_else(|| ParseError::missing(field))
}

fn opt_int(table: &Table, field: &str) -> Result<Option<u64>, ParseError> {
    match table.get(field) {
        Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
        Some(Value::Integer(_)) => Err(ParseError::bad(field, "must be nonnegative")),
        Some(_) => Err(ParseError::bad(field, "expected an integer")),
        None => Ok(None),
    }
}

fn req_float(table: &Table, field: &str) -> Result<f64, ParseError> {
    match table.get(field) {
        Some(Value::Float(x)) => Ok(*x),
        Some(Value::Integer(i)) => Ok(*i as f64),
        Some(_) => Err(ParseError::bad(field, "expected a number")),
        None => Err(ParseError::missing(field)),
    }
}

fn req_selector(table: &Table, field: &str) -> Result<Selector, ParseError> {
    let text = req_str(table, field)?;
    Selector::parse(&text).map_err(|e| ParseError::bad(field, e))
}

fn req_comparator(table: &Table, field: &str) -> Result<Comparator, ParseError> {
    match req_str(table, field)?.as_str() {
        "<" => Ok(Comparator::Lt),
        "<=" => Ok(Comparator::Le),
        ">" => Ok(Comparator::Gt),
        ">=" => Ok(Comparator::Ge),
        other => Err(ParseError::bad(
            field,
            format!("expected one of <, <=, >, >= (got `{other}`)"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COLLECT_DOC: &str = r#"
id = "airA"
user = "ann"
tier = 2

[periodic_collect]
selector = "class:constrained with:pm25"
sensor = "pm25"
period_ticks = 3000
"#;

    #[test]
    fn parses_five_minute_collect() {
        let spec = parse_function(COLLECT_DOC).unwrap();
        assert_eq!(spec.id.as_str(), "airA");
        assert_eq!(spec.tier, 2);
        match spec.kind {
            FunctionKind::PeriodicCollect { period_ticks, .. } => {
                // 5 minutes at 100 ms ticks.
                assert_eq!(period_ticks, 3000);
            }
            other => panic!("wrong kind: {other:?}"),
        }
    }

    #[test]
    fn empty_document_is_a_syntax_error_at_zero() {
        match parse_function("") {
            Err(ParseError::Syntax { position: 0, .. }) => {}
            other => panic!("expected Syntax at 0, got {other:?}"),
        }
    }

    #[test]
    fn malformed_toml_reports_position() {
        let err = parse_function("id = \"x\ntier=").unwrap_err();
        match err {
            ParseError::Syntax { .. } => {}
            other => panic!("expected Syntax, got {other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_field() {
        let doc = COLLECT_DOC.replace("tier = 2", "tier = 2\nbudget = 3");
        assert_eq!(
            parse_function(&doc).unwrap_err(),
            ParseError::UnknownField("budget".into())
        );
    }

    #[test]
    fn unknown_nested_field() {
        let doc = COLLECT_DOC.replace("sensor = \"pm25\"", "sensor = \"pm25\"\nrate = 1");
        assert_eq!(
            parse_function(&doc).unwrap_err(),
            ParseError::UnknownField("periodic_collect.rate".into())
        );
    }

    #[test]
    fn missing_kind_table() {
        let err = parse_function("id = \"x\"\ntier = 1\n").unwrap_err();
        assert!(matches!(err, ParseError::UnknownKind(_)));
    }

    #[test]
    fn two_kind_tables_rejected() {
        let doc = format!("{COLLECT_DOC}\n[edge_compute]\nselector = \"class:edge\"\nduration_ticks = 5\nperiod_ticks = 100\n");
        assert!(matches!(
            parse_function(&doc).unwrap_err(),
            ParseError::UnknownKind(_)
        ));
    }

    #[test]
    fn control_rule_round_trips_with_guard() {
        let doc = r#"
id = "lane"
tier = 1

[control_rule.condition]
node = "n5"
sensor = "temperature"
comparator = ">="
value = 30.0
period_ticks = 600
time_of_day = { start_tick = 0, end_tick = 432000 }

[control_rule.action]
selector = "class:edge"
actuator = "lane_sign"
value = 1.0
"#;
        let spec = parse_function(doc).unwrap();
        let text = serialize_function(&spec);
        assert_eq!(parse_function(&text).unwrap(), spec);
    }

    #[test]
    fn parse_is_total_on_junk() {
        for junk in [
            "{",
            "[[",
            "id",
            "\0\0\0",
            "[periodic_collect]\nselector = 3",
        ] {
            let _ = parse_function(junk);
        }
    }
}
