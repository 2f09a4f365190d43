//! sensornet-core: a deterministic discrete-event simulator for a star-variant
//! wireless sensor network, plus the serverless acquisition platform that runs
//! on top of it.
//!
//! The crate is organized around the platform's data path:
//!
//! * [`sim`] — topology, instruction execution, sensor sampling, per-hop
//!   delivery, energy accounting, channel scanning.
//! * [`functions`] — parsing and validation of user-submitted function
//!   documents, compiled down to per-node subscriptions.
//! * [`middleware`] — merges subscriptions into minimal physical acquisition
//!   schedules and fans results back out per user.
//! * [`scheduler`] — admission control against per-node capacity, tiered
//!   preemptive dispatch, retries, success accounting.
//! * [`billing`] — fixed-point metering of delivered results into an
//!   append-only ledger, invoices, operator margin.
//! * [`lifecycle`] — the seven-phase stochastic cost model with feedback
//!   expenditure levels and Monte Carlo reports.
//! * [`monitor`] — expected-vs-observed packet timeline diffing and
//!   maintenance escalation (restart, then field replace).
//! * [`platform`] — the command surface tying everything together, with
//!   file-based persistence and deterministic exports.
//!
//! Everything is seeded: for a fixed scenario, seed, and function set, event
//! logs and exports are byte-identical across runs.

pub mod billing;
pub mod functions;
pub mod ids;
pub mod lifecycle;
pub mod middleware;
pub mod monitor;
pub mod platform;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod sim;

pub use ids::{ActuatorKind, DeviceId, FunctionId, SensorKind, Tick, UserId};
