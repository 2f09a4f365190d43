//! Deterministic file exports: the ledger as CSV, deliveries / anomalies /
//! events / maintenance as newline-delimited JSON records, the run summary
//! and lifecycle report as structured text. Re-exporting the same state is
//! byte-identical.

use super::run::RunOutcome;
use super::PlatformError;
use crate::billing::{Currency, LedgerEntry};
use crate::ids::{FunctionId, UserId};
use crate::lifecycle::LifecycleReport;
use crate::middleware::DeliveryRecord;
use crate::monitor::Anomaly;
use crate::scheduler::SuccessReport;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub until_tick: u64,
    pub seed: u64,
    pub devices: usize,
    pub physical_acquisitions: u64,
    pub billed_units: u64,
    pub margin_units: i64,
    pub revenue: Currency,
    pub delivery_records: u64,
    pub anomalies: u64,
    pub maintenance_actions: u64,
    pub maintenance_cost: f64,
    pub starvation_alarms: u64,
    pub success: SuccessReport,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "run to tick {} (seed {}, {} devices)",
            self.until_tick, self.seed, self.devices
        )?;
        writeln!(f, "  physical acquisitions: {}", self.physical_acquisitions)?;
        writeln!(
            f,
            "  billed units: {} (margin {}, revenue {})",
            self.billed_units, self.margin_units, self.revenue
        )?;
        writeln!(f, "  delivery records: {}", self.delivery_records)?;
        writeln!(
            f,
            "  anomalies: {}, maintenance actions: {} (cost {:.4}), starvation alarms: {}",
            self.anomalies, self.maintenance_actions, self.maintenance_cost, self.starvation_alarms
        )?;
        write!(f, "{}", self.success)
    }
}

pub const LEDGER_FILE: &str = "ledger.csv";
pub const DELIVERIES_FILE: &str = "deliveries.ndjson";
pub const ANOMALIES_FILE: &str = "anomalies.ndjson";
pub const EVENTS_FILE: &str = "events.ndjson";
pub const MAINTENANCE_FILE: &str = "maintenance.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LIFECYCLE_REPORT_FILE: &str = "lifecycle_report.txt";

const LEDGER_HEADER: &[&str] = &["tick", "user", "function_id", "tier", "units", "amount"];

pub fn write_all(dir: &Path, outcome: &RunOutcome) -> Result<(), PlatformError> {
    write_ledger(&dir.join(LEDGER_FILE), &outcome.ledger)?;
    write_ndjson(&dir.join(DELIVERIES_FILE), &outcome.deliveries)?;
    write_ndjson(&dir.join(ANOMALIES_FILE), &outcome.anomalies)?;
    write_ndjson(&dir.join(EVENTS_FILE), &outcome.events)?;
    write_ndjson(&dir.join(MAINTENANCE_FILE), &outcome.maintenance)?;
    let summary = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    std::fs::write(dir.join(SUMMARY_FILE), summary + "\n")?;
    Ok(())
}

pub fn write_ledger(path: &Path, ledger: &[LedgerEntry]) -> Result<(), PlatformError> {
    let mut writer = csv::Writer::from_path(path).map_err(io_of_csv)?;
    writer.write_record(LEDGER_HEADER).map_err(io_of_csv)?;
    for entry in ledger {
        writer
            .write_record(&[
                entry.tick.to_string(),
                entry.user.to_string(),
                entry.function_id.to_string(),
                entry.tier.to_string(),
                entry.units.to_string(),
                entry.amount.to_string(),
            ])
            .map_err(io_of_csv)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_ledger(dir: &Path) -> Result<Vec<LedgerEntry>, PlatformError> {
    let path = dir.join(LEDGER_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(&path).map_err(io_of_csv)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(io_of_csv)?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        out.push(LedgerEntry {
            tick: field(0).parse().map_err(bad_data)?,
            user: UserId::new(field(1)),
            function_id: FunctionId::new(field(2)),
            tier: field(3).parse().map_err(bad_data)?,
            units: field(4).parse().map_err(bad_data)?,
            amount: Currency::from_str(field(5))?,
        });
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PlatformError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PlatformError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| bad_data(e).into()))
        .collect()
}

pub fn read_deliveries(dir: &Path) -> Result<Vec<DeliveryRecord>, PlatformError> {
    read_ndjson(&dir.join(DELIVERIES_FILE))
}

pub fn read_anomalies(dir: &Path) -> Result<Vec<Anomaly>, PlatformError> {
    read_ndjson(&dir.join(ANOMALIES_FILE))
}

pub fn write_lifecycle_report(dir: &Path, report: &LifecycleReport) -> Result<(), PlatformError> {
    std::fs::write(dir.join(LIFECYCLE_REPORT_FILE), format!("{report}\n"))?;
    Ok(())
}

/// What `export` can write to a caller-chosen path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Ledger,
    Deliveries,
    Anomalies,
    Events,
    Maintenance,
    Summary,
}

impl ArtifactKind {
    pub fn parse(s: &str) -> Option<ArtifactKind> {
        Some(match s {
            "ledger" => ArtifactKind::Ledger,
            "deliveries" => ArtifactKind::Deliveries,
            "anomalies" => ArtifactKind::Anomalies,
            "events" => ArtifactKind::Events,
            "maintenance" => ArtifactKind::Maintenance,
            "summary" => ArtifactKind::Summary,
            _ => return None,
        })
    }

    pub fn file_name(self) -> &'static str {
        match self {
            ArtifactKind::Ledger => LEDGER_FILE,
            ArtifactKind::Deliveries => DELIVERIES_FILE,
            ArtifactKind::Anomalies => ANOMALIES_FILE,
            ArtifactKind::Events => EVENTS_FILE,
            ArtifactKind::Maintenance => MAINTENANCE_FILE,
            ArtifactKind::Summary => SUMMARY_FILE,
        }
    }
}

/// Copy a run artifact to `dest`; byte-identical for identical state.
pub fn export_artifact(dir: &Path, kind: ArtifactKind, dest: &Path) -> Result<(), PlatformError> {
    let src = dir.join(kind.file_name());
    if !src.exists() {
        return Err(PlatformError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {} yet: run a scenario first", kind.file_name()),
        )));
    }
    std::fs::copy(&src, dest)?;
    Ok(())
}

fn io_of_csv(e: csv::Error) -> PlatformError {
    PlatformError::Io(std::io::Error::other(e))
}

fn bad_data(e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
}
