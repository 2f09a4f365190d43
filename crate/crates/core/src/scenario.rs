//! Scenario configuration: the single structured-text file describing a
//! deployment (device counts, seed, time base, capacity, channels, energy
//! constants, sensor signals, tier policies, limits, monitor thresholds).
//!
//! See `samples/scenario.toml` in the repository for a documented example.
//! Every section has defaults, so a minimal file can be just a seed.

use crate::billing::Currency;
use crate::ids::{ActuatorKind, SensorKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Length of one tick in milliseconds. 100 ms makes 600 ticks per minute,
    /// so a 600-per-minute acquisition cap is exactly one slot per tick.
    pub tick_millis: u64,
    pub devices: DeviceConfig,
    pub capacity: CapacityConfig,
    pub channels: ChannelConfig,
    pub energy: EnergyConfig,
    /// Signal parameters per sensor kind.
    pub sensors: BTreeMap<String, SignalConfig>,
    pub limits: LimitsConfig,
    pub tiers: Vec<TierConfig>,
    pub monitor: MonitorConfig,
    pub maintenance: MaintenanceConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let mut sensors = BTreeMap::new();
        sensors.insert("temperature".to_owned(), SignalConfig::temperature());
        sensors.insert("pm25".to_owned(), SignalConfig::pm25());
        Self {
            seed: 0,
            tick_millis: 100,
            devices: DeviceConfig::default(),
            capacity: CapacityConfig::default(),
            channels: ChannelConfig::default(),
            energy: EnergyConfig::default(),
            sensors,
            limits: LimitsConfig::default(),
            tiers: TierConfig::default_tiers(),
            monitor: MonitorConfig::default(),
            maintenance: MaintenanceConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Ticks per minute under this time base.
    pub fn ticks_per_minute(&self) -> u64 {
        60_000 / self.tick_millis
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tick_millis == 0 || self.tick_millis > 60_000 {
            return Err(ConfigError::Invalid(
                "tick_millis must be in 1..=60000".into(),
            ));
        }
        if 60_000 % self.tick_millis != 0 {
            return Err(ConfigError::Invalid(
                "tick_millis must divide 60000 evenly".into(),
            ));
        }
        if self.capacity.max_acq_per_minute == 0 {
            return Err(ConfigError::Invalid(
                "max_acq_per_minute must be >= 1".into(),
            ));
        }
        if self.tick_millis * self.capacity.max_acq_per_minute > 60_000 {
            return Err(ConfigError::Invalid(
                "tick_millis * max_acq_per_minute must be <= 60000 (a tick is the finest slot)"
                    .into(),
            ));
        }
        if self.channels.count == 0 {
            return Err(ConfigError::Invalid("channel count must be >= 1".into()));
        }
        if let Some(v) = &self.channels.interference {
            if v.len() != self.channels.count {
                return Err(ConfigError::Invalid(
                    "interference vector length must equal channel count".into(),
                ));
            }
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(ConfigError::Invalid(
                    "interference values must be in [0,1]".into(),
                ));
            }
        }
        for rate in self.channels.effective_loss_rates() {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ConfigError::Invalid("loss rates must be in [0,1]".into()));
            }
        }
        if self.tiers.is_empty() {
            return Err(ConfigError::Invalid("at least one tier required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut last_rate: Option<Currency> = None;
        for t in &self.tiers {
            if !(1..=3).contains(&t.tier) {
                return Err(ConfigError::Invalid("tier must be 1, 2 or 3".into()));
            }
            if !seen.insert(t.tier) {
                return Err(ConfigError::Invalid(format!("duplicate tier {}", t.tier)));
            }
            if t.tier == 1 && t.target_success_rate < 0.99 {
                return Err(ConfigError::Invalid(
                    "tier 1 target success rate must be >= 0.99".into(),
                ));
            }
            if let Some(prev) = last_rate {
                if t.rate_per_acquisition >= prev {
                    return Err(ConfigError::Invalid(
                        "rates must strictly decrease with tier number".into(),
                    ));
                }
            }
            last_rate = Some(t.rate_per_acquisition);
        }
        if seen.len() != 3 {
            return Err(ConfigError::Invalid(
                "tiers 1, 2 and 3 must all be configured".into(),
            ));
        }
        if self.limits.max_functions_per_user == 0
            || self.limits.max_condition_depth == 0
            || self.limits.min_period_ticks == 0
        {
            return Err(ConfigError::Invalid("limits must all be >= 1".into()));
        }
        if self.maintenance.level_multipliers.len() != 4 {
            return Err(ConfigError::Invalid(
                "maintenance.level_multipliers must have exactly 4 entries".into(),
            ));
        }
        if !self
            .maintenance
            .level_multipliers
            .windows(2)
            .all(|w| w[0] < w[1])
        {
            return Err(ConfigError::Invalid(
                "maintenance.level_multipliers must strictly increase".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub edge: u32,
    pub infrastructure: u32,
    pub constrained: u32,
    /// How many of the infrastructure devices act as sink gateways.
    pub gateways: u32,
    /// Fraction of constrained nodes parented to another constrained node
    /// (multi-hop leaves); the rest attach to infrastructure directly.
    pub relay_fraction: f64,
    /// Maximum parent-chain length below a gateway.
    pub max_relay_depth: u32,
    /// Sensors owned by every constrained node.
    pub constrained_sensors: Vec<SensorKind>,
    /// Actuators owned by every constrained node.
    pub constrained_actuators: Vec<ActuatorKind>,
    /// Actuators owned by every edge-compute device.
    pub edge_actuators: Vec<ActuatorKind>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            edge: 10,
            infrastructure: 40,
            constrained: 100,
            gateways: 4,
            relay_fraction: 0.2,
            max_relay_depth: 3,
            constrained_sensors: vec![SensorKind::new("temperature"), SensorKind::new("pm25")],
            constrained_actuators: vec![],
            edge_actuators: vec![ActuatorKind::new("lane_sign")],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityConfig {
    /// W: maximum acquisitions per minute for a constrained node.
    pub max_acq_per_minute: u64,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            max_acq_per_minute: 600,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub count: usize,
    /// Explicit interference per channel in [0,1]; generated from the
    /// scenario seed when absent.
    pub interference: Option<Vec<f64>>,
    /// Per-hop delivery loss probability, per channel. A single value applies
    /// to all channels.
    pub loss_rates: Option<Vec<f64>>,
    pub loss_rate: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            count: 16,
            interference: None,
            loss_rates: None,
            loss_rate: 0.0,
        }
    }
}

impl ChannelConfig {
    pub fn effective_loss_rates(&self) -> Vec<f64> {
        match &self.loss_rates {
            Some(v) if v.len() == self.count => v.clone(),
            Some(v) => {
                let mut out = v.clone();
                out.resize(self.count, self.loss_rate);
                out
            }
            None => vec![self.loss_rate; self.count],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Initial budget for every constrained node, in joules.
    pub budget_j: f64,
    pub per_acquisition_j: f64,
    pub per_transmit_hop_j: f64,
    pub idle_per_tick_j: f64,
    /// Per-device initial budget overrides (constrained nodes only).
    pub overrides: BTreeMap<String, f64>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            budget_j: 1000.0,
            per_acquisition_j: 0.001,
            per_transmit_hop_j: 0.002,
            idle_per_tick_j: 0.000_001,
            overrides: BTreeMap::new(),
        }
    }
}

/// Deterministic synthetic signal: baseline + amplitude * sin(2π t / period)
/// plus bounded seeded noise. Parameters are per sensor kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub baseline: f64,
    pub amplitude: f64,
    pub period_ticks: u64,
    pub noise_amplitude: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            baseline: 0.0,
            amplitude: 1.0,
            period_ticks: 36_000,
            noise_amplitude: 0.0,
        }
    }
}

impl SignalConfig {
    fn temperature() -> Self {
        Self {
            baseline: 20.0,
            amplitude: 5.0,
            period_ticks: 36_000,
            noise_amplitude: 0.1,
        }
    }

    fn pm25() -> Self {
        Self {
            baseline: 35.0,
            amplitude: 20.0,
            period_ticks: 18_000,
            noise_amplitude: 1.0,
        }
    }
}

/// Writing-specification limits enforced at validation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub max_functions_per_user: usize,
    pub max_condition_depth: u32,
    pub min_period_ticks: u64,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            max_functions_per_user: 16,
            max_condition_depth: 2,
            min_period_ticks: 1,
        }
    }
}

/// One priority tier: preemption rank, success target, retries, price.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    pub tier: u8,
    pub target_success_rate: f64,
    pub max_retries: u32,
    pub rate_per_acquisition: Currency,
}

impl TierConfig {
    pub fn default_tiers() -> Vec<TierConfig> {
        vec![
            TierConfig {
                tier: 1,
                target_success_rate: 0.99,
                max_retries: 2,
                rate_per_acquisition: Currency::from_str("0.01").unwrap(),
            },
            TierConfig {
                tier: 2,
                target_success_rate: 0.95,
                max_retries: 1,
                rate_per_acquisition: Currency::from_str("0.002").unwrap(),
            },
            TierConfig {
                tier: 3,
                target_success_rate: 0.90,
                max_retries: 0,
                rate_per_acquisition: Currency::from_str("0.0005").unwrap(),
            },
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// NodeSilent after this many consecutive missed expected deliveries.
    pub consecutive_miss_threshold: u32,
    /// Sliding window for the ExcessLoss rate, in ticks (default one hour).
    pub loss_window_ticks: u64,
    /// Miss rate above which ExcessLoss is raised.
    pub excess_loss_threshold: f64,
    /// Restart confirmation window, as a multiple of the node's schedule
    /// period; a NodeSilent recurrence inside it escalates to FieldReplace.
    pub restart_confirm_factor: u64,
    /// How often the sniffer diffs expected vs observed during a run.
    pub interval_ticks: u64,
    /// Deferral bound before a StarvationAlarm is reported.
    pub starvation_deferral_bound: u64,
    /// Minimum per-tier sample size before a success verdict is issued.
    pub min_success_samples: u64,
    /// Minimum expected deliveries in the loss window before an ExcessLoss
    /// verdict is meaningful.
    pub min_loss_samples: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            consecutive_miss_threshold: 3,
            loss_window_ticks: 36_000,
            excess_loss_threshold: 0.10,
            restart_confirm_factor: 2,
            interval_ticks: 600,
            starvation_deferral_bound: 10,
            min_success_samples: 1000,
            min_loss_samples: 10,
        }
    }
}

/// Costing for in-run maintenance actions, posted to the lifecycle ledger.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaintenanceConfig {
    pub base_cost: f64,
    /// Expenditure-level cost multipliers, levels 1..=4 (green to red).
    pub level_multipliers: Vec<f64>,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        Self {
            base_cost: 10.0,
            level_multipliers: vec![1.0, 3.0, 9.0, 27.0],
        }
    }
}
