//! The platform surface: serialized command processing over the function
//! store, the scenario engine, queries, and deterministic file exports.

pub mod export;
pub mod run;
pub mod store;

use crate::billing::{invoice, BillingError, Invoice};
use crate::functions::{
    compile_to_subscriptions, parse_function, validate, CompileError, ParseError, Subscription,
    UserState, Violation,
};
use crate::ids::{FunctionId, Tick, UserId};
use crate::lifecycle::{simulate_lifecycle, LifecycleError, LifecyclePlan, LifecycleReport};
use crate::middleware::{DeliveryRecord, MiddlewareError};
use crate::monitor::{Anomaly, MonitorError};
use crate::scenario::{ConfigError, ScenarioConfig};
use crate::scheduler::{AdmitOutcome, LoadBook, RejectReason};
use crate::sim::SimError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use store::{FunctionRecord, FunctionStatus, FunctionStore};
use thiserror::Error;

pub use export::RunSummary;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error("{0}")]
    Compile(#[from] CompileError),
    #[error("capacity: {0}")]
    Capacity(RejectReason),
    #[error("sim: {0}")]
    Sim(#[from] SimError),
    #[error("middleware: {0}")]
    Middleware(#[from] MiddlewareError),
    #[error("billing: {0}")]
    Billing(#[from] BillingError),
    #[error("lifecycle: {0}")]
    Lifecycle(#[from] LifecycleError),
    #[error("monitor: {0}")]
    Monitor(#[from] MonitorError),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown function {0}")]
    UnknownFunction(FunctionId),
    #[error("function id {0} already exists")]
    DuplicateFunction(FunctionId),
    #[error("platform not initialized with a scenario (run `scenario run --config ...` first)")]
    NotInitialized,
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl PlatformError {
    /// CLI exit code: 0 success, 2 validation failure, 3 capacity rejection,
    /// 4 config or IO error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PlatformError::Capacity(_) => 3,
            PlatformError::Config(_) | PlatformError::Io(_) => 4,
            PlatformError::Lifecycle(LifecycleError::Io(_)) => 4,
            _ => 2,
        }
    }
}

/// Commands accepted by the platform, processed strictly in submission
/// order; each receives a monotonically increasing sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    SubmitFunction {
        spec_text: String,
        user: UserId,
    },
    CancelFunction {
        id: FunctionId,
    },
    RunScenario {
        until_tick: Tick,
        #[serde(default)]
        seed: Option<u64>,
    },
    QueryResults {
        user: UserId,
        from_tick: Tick,
        to_tick: Tick,
    },
    QueryInvoice {
        user: UserId,
        from_tick: Tick,
        to_tick: Tick,
    },
    RunLifecycle {
        plan_path: PathBuf,
        n: u64,
        seed: u64,
    },
    MonitorReport {
        from_tick: Tick,
        to_tick: Tick,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "output", rename_all = "snake_case")]
pub enum CommandOutput {
    Submitted {
        id: FunctionId,
        subscriptions: usize,
    },
    Cancelled {
        id: FunctionId,
    },
    RunFinished {
        summary: RunSummary,
    },
    Results {
        records: Vec<DeliveryRecord>,
    },
    Invoice {
        invoice: Invoice,
    },
    Lifecycle {
        report: LifecycleReport,
    },
    Monitor {
        anomalies: Vec<Anomaly>,
    },
}

/// The stateful platform: a scenario, a persistent function store, and the
/// artifacts of the latest run. One writer, many readers; every mutation
/// goes through [`Platform::process`].
pub struct Platform {
    data_dir: PathBuf,
    scenario: ScenarioConfig,
    store: FunctionStore,
    next_seq: u64,
}

impl Platform {
    /// Open a platform rooted at `data_dir`, installing `scenario` as the
    /// active scenario (persisted for later invocations).
    pub fn init(data_dir: &Path, scenario: ScenarioConfig) -> Result<Self, PlatformError> {
        scenario.validate()?;
        std::fs::create_dir_all(data_dir)?;
        let text =
            toml::to_string_pretty(&scenario).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        std::fs::write(data_dir.join("scenario.toml"), text)?;
        let store = FunctionStore::open(&data_dir.join("functions"))?;
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            scenario,
            store,
            next_seq: 0,
        })
    }

    /// Open a previously initialized platform from its data directory.
    pub fn open(data_dir: &Path) -> Result<Self, PlatformError> {
        let scenario_path = data_dir.join("scenario.toml");
        if !scenario_path.exists() {
            return Err(PlatformError::NotInitialized);
        }
        let scenario = ScenarioConfig::from_path(&scenario_path)?;
        let store = FunctionStore::open(&data_dir.join("functions"))?;
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            scenario,
            store,
            next_seq: 0,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn store(&self) -> &FunctionStore {
        &self.store
    }

    /// Process one command; commands are totally ordered by sequence number.
    pub fn process(&mut self, command: Command) -> Result<CommandOutput, PlatformError> {
        self.next_seq += 1;
        match command {
            Command::SubmitFunction { spec_text, user } => {
                let (id, subscriptions) = self.submit_function(&spec_text, &user)?;
                Ok(CommandOutput::Submitted { id, subscriptions })
            }
            Command::CancelFunction { id } => {
                self.cancel_function(&id)?;
                Ok(CommandOutput::Cancelled { id })
            }
            Command::RunScenario { until_tick, seed } => {
                let summary = self.run_scenario(until_tick, seed)?;
                Ok(CommandOutput::RunFinished { summary })
            }
            Command::QueryResults {
                user,
                from_tick,
                to_tick,
            } => {
                let records = self.query_results(&user, from_tick, to_tick)?;
                Ok(CommandOutput::Results { records })
            }
            Command::QueryInvoice {
                user,
                from_tick,
                to_tick,
            } => {
                let inv = self.query_invoice(&user, from_tick, to_tick)?;
                Ok(CommandOutput::Invoice { invoice: inv })
            }
            Command::RunLifecycle { plan_path, n, seed } => {
                let report = self.run_lifecycle(&plan_path, n, seed)?;
                Ok(CommandOutput::Lifecycle { report })
            }
            Command::MonitorReport { from_tick, to_tick } => {
                let anomalies = self.monitor_report(from_tick, to_tick)?;
                Ok(CommandOutput::Monitor { anomalies })
            }
        }
    }

    /// Parse, validate, admit, and store a function. On any stage failure
    /// the function is stored as Rejected with its reasons and **no** other
    /// state changes leak: the load book is rebuilt from the store, so a
    /// rejected submission leaves everything bit-identical.
    pub fn submit_function(
        &mut self,
        spec_text: &str,
        user: &UserId,
    ) -> Result<(FunctionId, usize), PlatformError> {
        let seq = self.next_seq;
        let mut spec = match parse_function(spec_text) {
            Ok(spec) => spec,
            Err(e) => {
                let id = FunctionId::new(format!("rejected-{seq}"));
                self.store.insert(FunctionRecord {
                    id: id.clone(),
                    owner: user.clone(),
                    spec_text: spec_text.to_owned(),
                    status: FunctionStatus::Rejected {
                        reasons: vec![e.to_string()],
                    },
                    seq,
                })?;
                return Err(e.into());
            }
        };
        spec.user = user.clone();
        if self.store.contains(&spec.id) {
            return Err(PlatformError::DuplicateFunction(spec.id));
        }

        let reject = |store: &mut FunctionStore, id: &FunctionId, reasons: Vec<String>| {
            store.insert(FunctionRecord {
                id: id.clone(),
                owner: user.clone(),
                spec_text: spec_text.to_owned(),
                status: FunctionStatus::Rejected { reasons },
                seq,
            })
        };

        let violations = validate(
            &spec,
            &self.scenario.limits,
            &UserState {
                active_functions: self.store.active_count_for(user),
            },
        );
        if !violations.is_empty() {
            reject(
                &mut self.store,
                &spec.id,
                violations.iter().map(|v| v.to_string()).collect(),
            )?;
            return Err(PlatformError::Validation(violations));
        }

        let topology = crate::sim::build_topology(&self.scenario.devices, self.scenario.seed)?;
        let subs = match compile_to_subscriptions(&spec, &topology) {
            Ok(subs) => subs,
            Err(e) => {
                reject(&mut self.store, &spec.id, vec![e.to_string()])?;
                return Err(e.into());
            }
        };

        // Rebuild the load book from currently active functions, then try to
        // admit every new subscription against it.
        let mut book = self.rebuild_load_book(&topology)?;
        for sub in &subs {
            match book.admit(sub) {
                AdmitOutcome::Accepted { .. } => {}
                AdmitOutcome::Rejected(reason) => {
                    reject(&mut self.store, &spec.id, vec![reason.to_string()])?;
                    return Err(PlatformError::Capacity(reason));
                }
            }
        }

        let count = subs.len();
        self.store.insert(FunctionRecord {
            id: spec.id.clone(),
            owner: user.clone(),
            spec_text: spec_text.to_owned(),
            status: FunctionStatus::Active,
            seq,
        })?;
        Ok((spec.id, count))
    }

    pub fn cancel_function(&mut self, id: &FunctionId) -> Result<(), PlatformError> {
        self.store.set_status(id, FunctionStatus::Cancelled)
    }

    /// All currently active subscriptions, compiled in submission order.
    pub fn active_subscriptions(&self) -> Result<Vec<Subscription>, PlatformError> {
        let topology = crate::sim::build_topology(&self.scenario.devices, self.scenario.seed)?;
        let mut subs = Vec::new();
        for record in self.store.active_records() {
            let mut spec = parse_function(&record.spec_text)?;
            spec.user = record.owner.clone();
            subs.extend(compile_to_subscriptions(&spec, &topology)?);
        }
        Ok(subs)
    }

    fn rebuild_load_book(
        &self,
        topology: &crate::sim::Topology,
    ) -> Result<LoadBook, PlatformError> {
        let mut book = LoadBook::new(
            self.scenario.capacity.max_acq_per_minute,
            self.scenario.ticks_per_minute(),
        );
        for record in self.store.active_records() {
            let mut spec = parse_function(&record.spec_text)?;
            spec.user = record.owner.clone();
            for sub in compile_to_subscriptions(&spec, topology)? {
                // Previously admitted functions re-admit cleanly by
                // construction; a failure here means the store was edited
                // behind the platform's back.
                if let AdmitOutcome::Rejected(reason) = book.admit(&sub) {
                    return Err(PlatformError::Capacity(reason));
                }
            }
        }
        Ok(book)
    }

    pub fn run_scenario(
        &mut self,
        until_tick: Tick,
        seed_override: Option<u64>,
    ) -> Result<RunSummary, PlatformError> {
        let mut scenario = self.scenario.clone();
        if let Some(seed) = seed_override {
            scenario.seed = seed;
        }
        let subs = self.active_subscriptions()?;
        let outcome = run::run_scenario(&scenario, &subs, until_tick)?;
        export::write_all(&self.data_dir, &outcome)?;
        Ok(outcome.summary)
    }

    /// Exactly the user's own records, never another user's. A known user
    /// with no demand gets an empty list; only a nameless user is an error.
    pub fn query_results(
        &self,
        user: &UserId,
        from_tick: Tick,
        to_tick: Tick,
    ) -> Result<Vec<DeliveryRecord>, PlatformError> {
        if user.as_str().is_empty() {
            return Err(PlatformError::UnknownUser(user.clone()));
        }
        let records = export::read_deliveries(&self.data_dir)?;
        Ok(records
            .into_iter()
            .filter(|r| &r.user == user && r.demand_tick >= from_tick && r.demand_tick < to_tick)
            .collect())
    }

    pub fn query_invoice(
        &self,
        user: &UserId,
        from_tick: Tick,
        to_tick: Tick,
    ) -> Result<Invoice, PlatformError> {
        if user.as_str().is_empty() {
            return Err(PlatformError::UnknownUser(user.clone()));
        }
        let ledger = export::read_ledger(&self.data_dir)?;
        Ok(invoice(&ledger, user, from_tick, to_tick))
    }

    pub fn run_lifecycle(
        &self,
        plan_path: &Path,
        n: u64,
        seed: u64,
    ) -> Result<LifecycleReport, PlatformError> {
        let plan = LifecyclePlan::from_path(plan_path)?;
        let report = simulate_lifecycle(&plan, n, seed)?;
        export::write_lifecycle_report(&self.data_dir, &report)?;
        Ok(report)
    }

    pub fn monitor_report(
        &self,
        from_tick: Tick,
        to_tick: Tick,
    ) -> Result<Vec<Anomaly>, PlatformError> {
        let anomalies = export::read_anomalies(&self.data_dir)?;
        Ok(anomalies
            .into_iter()
            .filter(|a| a.first_tick >= from_tick && a.first_tick < to_tick)
            .collect())
    }
}

pub use run::RunOutcome;
