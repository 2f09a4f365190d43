//! Command-line surface for the sensornet platform. All state lives in a
//! data directory; every subcommand maps one-to-one onto a platform command.
//!
//! Exit codes: 0 success, 2 validation failure, 3 capacity rejection,
//! 4 config/IO error.

mod serve;

use clap::{Parser, Subcommand};
use sensornet_core::platform::export::{export_artifact, ArtifactKind};
use sensornet_core::platform::{Command, CommandOutput, Platform, PlatformError};
use sensornet_core::scenario::ScenarioConfig;
use sensornet_core::{FunctionId, UserId};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sensornet",
    version,
    about = "Serverless sensor-network platform simulator"
)]
struct Cli {
    /// Platform state directory (scenario, function store, exports).
    #[arg(long, default_value = "data", global = true)]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Top,
}

#[derive(Subcommand)]
enum Top {
    /// Scenario lifecycle: configure and run the simulated network.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Submit or cancel serverless functions.
    #[command(name = "fn")]
    Function {
        #[command(subcommand)]
        cmd: FnCmd,
    },
    /// Query delivery results.
    Results {
        #[command(subcommand)]
        cmd: ResultsCmd,
    },
    /// Billing queries.
    Billing {
        #[command(subcommand)]
        cmd: BillingCmd,
    },
    /// Lifecycle cost model.
    Lifecycle {
        #[command(subcommand)]
        cmd: LifecycleCmd,
    },
    /// Sniffer reports.
    Monitor {
        #[command(subcommand)]
        cmd: MonitorCmd,
    },
    /// Copy a run artifact to a chosen path (byte-identical re-export).
    Export {
        /// ledger | deliveries | anomalies | events | maintenance | summary
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the same commands over a line-delimited JSON TCP endpoint.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
        /// Exit after this many connections (0 = run forever).
        #[arg(long, default_value_t = 0)]
        max_connections: u64,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Build the topology and execute all active schedules up to a tick.
    Run {
        /// Scenario file; omit to reuse the stored one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        until: u64,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum FnCmd {
    /// Submit a function document.
    Submit {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        user: String,
    },
    /// Cancel an active function.
    Cancel {
        #[arg(long)]
        id: String,
    },
}

#[derive(Subcommand)]
enum ResultsCmd {
    /// A user's own delivery records over a tick window.
    Query {
        #[arg(long)]
        user: String,
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
    },
}

#[derive(Subcommand)]
enum BillingCmd {
    /// Invoice one user over a tick window.
    Invoice {
        #[arg(long)]
        user: String,
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
    },
}

#[derive(Subcommand)]
enum LifecycleCmd {
    /// Monte Carlo over a lifecycle plan file.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum MonitorCmd {
    /// Anomalies raised in a tick window of the latest run.
    Report {
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn open_platform(data_dir: &std::path::Path) -> Result<Platform, PlatformError> {
    Platform::open(data_dir)
}

fn dispatch(cli: Cli) -> Result<(), PlatformError> {
    match cli.command {
        Top::Scenario {
            cmd:
                ScenarioCmd::Run {
                    config,
                    until,
                    seed,
                },
        } => {
            let mut platform = match config {
                Some(path) => Platform::init(&cli.data_dir, ScenarioConfig::from_path(&path)?)?,
                None => open_platform(&cli.data_dir)?,
            };
            let output = platform.process(Command::RunScenario {
                until_tick: until,
                seed,
            })?;
            if let CommandOutput::RunFinished { summary } = output {
                println!("{summary}");
            }
            Ok(())
        }
        Top::Function { cmd } => {
            let mut platform = open_platform(&cli.data_dir)?;
            match cmd {
                FnCmd::Submit { file, user } => {
                    let text = std::fs::read_to_string(&file)?;
                    let output = platform.process(Command::SubmitFunction {
                        spec_text: text,
                        user: UserId::new(user),
                    })?;
                    if let CommandOutput::Submitted { id, subscriptions } = output {
                        println!("accepted {id} ({subscriptions} subscriptions)");
                    }
                    Ok(())
                }
                FnCmd::Cancel { id } => {
                    platform.process(Command::CancelFunction {
                        id: FunctionId::new(id.clone()),
                    })?;
                    println!("cancelled {id}");
                    Ok(())
                }
            }
        }
        Top::Results {
            cmd: ResultsCmd::Query { user, from, to },
        } => {
            let mut platform = open_platform(&cli.data_dir)?;
            let output = platform.process(Command::QueryResults {
                user: UserId::new(user),
                from_tick: from,
                to_tick: to,
            })?;
            if let CommandOutput::Results { records } = output {
                for record in records {
                    println!("{}", serde_json::to_string(&record).expect("serializes"));
                }
            }
            Ok(())
        }
        Top::Billing {
            cmd: BillingCmd::Invoice { user, from, to },
        } => {
            let mut platform = open_platform(&cli.data_dir)?;
            let output = platform.process(Command::QueryInvoice {
                user: UserId::new(user),
                from_tick: from,
                to_tick: to,
            })?;
            if let CommandOutput::Invoice { invoice } = output {
                println!("{invoice}");
            }
            Ok(())
        }
        Top::Lifecycle {
            cmd: LifecycleCmd::Simulate { plan, n, seed },
        } => {
            let mut platform = open_platform(&cli.data_dir)?;
            let output = platform.process(Command::RunLifecycle {
                plan_path: plan,
                n,
                seed,
            })?;
            if let CommandOutput::Lifecycle { report } = output {
                println!("{report}");
            }
            Ok(())
        }
        Top::Monitor {
            cmd: MonitorCmd::Report { from, to },
        } => {
            let mut platform = open_platform(&cli.data_dir)?;
            let output = platform.process(Command::MonitorReport {
                from_tick: from,
                to_tick: to,
            })?;
            if let CommandOutput::Monitor { anomalies } = output {
                for anomaly in anomalies {
                    println!("{}", serde_json::to_string(&anomaly).expect("serializes"));
                }
            }
            Ok(())
        }
        Top::Export { kind, out } => {
            let kind = ArtifactKind::parse(&kind).ok_or_else(|| {
                PlatformError::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("unknown artifact kind `{kind}`"),
                ))
            })?;
            export_artifact(&cli.data_dir, kind, &out)
        }
        Top::Serve {
            addr,
            max_connections,
        } => {
            let platform = open_platform(&cli.data_dir)?;
            serve::serve(platform, &addr, max_connections)
        }
    }
}
