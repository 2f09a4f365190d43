//! The product lifecycle cost model: seven phases in forward order, each with
//! a cost/duration distribution and a failure probability. Failures feed back
//! to an earlier phase at one of four expenditure levels (green to red), and
//! the whole chain is played out by Monte Carlo against a ten-year horizon.
//! Phase-advance decisions weigh confidence in the net benefit against
//! confidence in successful implementation.

use crate::ids::{DeviceId, Tick};
use crate::rng::{mix64, sub_seed};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifecycleError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("decision inputs contain no samples")]
    EmptySamples,
    #[error("phase switching is only free from Maintenance (current phase: {0:?})")]
    NotInMaintenance(Phase),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

/// The seven lifecycle phases, in forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Configuration,
    TrialProduction,
    Debugging,
    BatchProduction,
    Deployment,
    Operation,
    Maintenance,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Configuration,
        Phase::TrialProduction,
        Phase::Debugging,
        Phase::BatchProduction,
        Phase::Deployment,
        Phase::Operation,
        Phase::Maintenance,
    ];

    pub fn index(self) -> usize {
        Phase::ALL.iter().position(|p| *p == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Configuration => "configuration",
            Phase::TrialProduction => "trial_production",
            Phase::Debugging => "debugging",
            Phase::BatchProduction => "batch_production",
            Phase::Deployment => "deployment",
            Phase::Operation => "operation",
            Phase::Maintenance => "maintenance",
        }
    }
}

/// Expenditure severity of a feedback transition: 1 (green) to 4 (red).
/// Cost multipliers strictly increase with the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpenditureLevel(pub u8);

impl ExpenditureLevel {
    pub fn valid(self) -> bool {
        (1..=4).contains(&self.0)
    }
}

/// Cost or duration distribution; the supported family covers
/// expert-elicited point estimates and ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Point(f64),
    Uniform([f64; 2]),
    Triangular([f64; 3]),
}

impl Dist {
    pub const ZERO: Dist = Dist::Point(0.0);

    /// Draw one value. Point distributions consume no randomness, so fully
    /// deterministic plans stay bit-exact.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Dist::Point(x) => x,
            Dist::Uniform([a, b]) => a + (b - a) * rng.gen::<f64>(),
            Dist::Triangular([a, m, b]) => {
                let u: f64 = rng.gen();
                let span = b - a;
                if span == 0.0 {
                    return a;
                }
                let cut = (m - a) / span;
                if u < cut {
                    a + (u * span * (m - a)).sqrt()
                } else {
                    b - ((1.0 - u) * span * (b - m)).sqrt()
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Point(x) => x,
            Dist::Uniform([a, b]) => (a + b) / 2.0,
            Dist::Triangular([a, m, b]) => (a + m + b) / 3.0,
        }
    }

    fn check(&self, what: &str, nonnegative: bool) -> Result<(), LifecycleError> {
        let bounds: Vec<f64> = match *self {
            Dist::Point(x) => vec![x],
            Dist::Uniform(ab) => ab.to_vec(),
            Dist::Triangular(amb) => amb.to_vec(),
        };
        if bounds.iter().any(|x| !x.is_finite()) {
            return Err(LifecycleError::InvalidPlan(format!(
                "{what}: bounds must be finite"
            )));
        }
        if bounds.windows(2).any(|w| w[0] > w[1]) {
            return Err(LifecycleError::InvalidPlan(format!(
                "{what}: bounds must be ordered"
            )));
        }
        if nonnegative && bounds[0] < 0.0 {
            return Err(LifecycleError::InvalidPlan(format!(
                "{what}: must be nonnegative"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEdge {
    pub target: Phase,
    pub level: ExpenditureLevel,
}

/// Per-phase stochastic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    pub cost: Dist,
    pub duration_days: Dist,
    #[serde(default)]
    pub failure_prob: f64,
    #[serde(default)]
    pub feedback: Option<FeedbackEdge>,
    #[serde(default = "zero_dist")]
    pub feedback_cost: Dist,
    #[serde(default = "zero_dist")]
    pub feedback_duration_days: Dist,
}

fn zero_dist() -> Dist {
    Dist::ZERO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecyclePlan {
    /// Ten years by default.
    #[serde(default = "default_horizon")]
    pub horizon_days: f64,
    /// Cost multipliers for expenditure levels 1..=4.
    #[serde(default = "default_multipliers")]
    pub level_multipliers: [f64; 4],
    /// All seven phases must be present, keyed by phase name.
    pub phases: BTreeMap<Phase, PhaseModel>,
}

fn default_horizon() -> f64 {
    3650.0
}

fn default_multipliers() -> [f64; 4] {
    [1.0, 3.0, 9.0, 27.0]
}

impl LifecyclePlan {
    pub fn from_path(path: &Path) -> Result<Self, LifecycleError> {
        let text = std::fs::read_to_string(path).map_err(|e| LifecycleError::Io(e.to_string()))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, LifecycleError> {
        let plan: LifecyclePlan =
            toml::from_str(text).map_err(|e| LifecycleError::Parse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn multiplier(&self, level: ExpenditureLevel) -> f64 {
        self.level_multipliers[usize::from(level.0 - 1)]
    }

    pub fn model(&self, phase: Phase) -> &PhaseModel {
        &self.phases[&phase]
    }

    pub fn validate(&self) -> Result<(), LifecycleError> {
        if self.horizon_days <= 0.0 || self.horizon_days.is_nan() {
            return Err(LifecycleError::InvalidPlan(
                "horizon must be positive".into(),
            ));
        }
        if !self.level_multipliers.windows(2).all(|w| w[0] < w[1]) {
            return Err(LifecycleError::InvalidPlan(
                "level multipliers must strictly increase".into(),
            ));
        }
        for phase in Phase::ALL {
            let model = self.phases.get(&phase).ok_or_else(|| {
                LifecycleError::InvalidPlan(format!("missing phase `{}`", phase.name()))
            })?;
            model.cost.check(&format!("{} cost", phase.name()), false)?;
            model
                .duration_days
                .check(&format!("{} duration", phase.name()), true)?;
            model
                .feedback_cost
                .check(&format!("{} feedback cost", phase.name()), false)?;
            model
                .feedback_duration_days
                .check(&format!("{} feedback duration", phase.name()), true)?;
            if !(0.0..=1.0).contains(&model.failure_prob) {
                return Err(LifecycleError::InvalidPlan(format!(
                    "{} failure probability outside [0,1]",
                    phase.name()
                )));
            }
            match &model.feedback {
                Some(edge) => {
                    if !edge.level.valid() {
                        return Err(LifecycleError::InvalidPlan(format!(
                            "{} feedback level must be 1..=4",
                            phase.name()
                        )));
                    }
                    if edge.target.index() > phase.index() {
                        return Err(LifecycleError::InvalidPlan(format!(
                            "{} feedback target `{}` does not precede it",
                            phase.name(),
                            edge.target.name()
                        )));
                    }
                }
                None => {
                    if model.failure_prob > 0.0 {
                        return Err(LifecycleError::InvalidPlan(format!(
                            "{} can fail but has no feedback edge",
                            phase.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Attempt,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStep {
    pub phase: Phase,
    pub attempt: u32,
    pub cost: f64,
    pub duration_days: f64,
    pub kind: StepKind,
}

/// One Monte Carlo realization of the full lifecycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub total_cost: f64,
    pub total_days: f64,
    /// All seven phases finished within the horizon.
    pub completed: bool,
}

// Spending stops once the horizon is exhausted; this guard only catches
// degenerate zero-duration loops with failure probability 1.
const MAX_STEPS_PER_TRAJECTORY: usize = 1_000_000;

pub fn simulate_trajectory(plan: &LifecyclePlan, rng: &mut impl Rng) -> Trajectory {
    let mut steps = Vec::new();
    let mut attempts = [0u32; 7];
    let mut total_cost = 0.0;
    let mut total_days = 0.0;
    let mut idx = 0usize;
    while idx < Phase::ALL.len() && steps.len() < MAX_STEPS_PER_TRAJECTORY {
        let phase = Phase::ALL[idx];
        let model = plan.model(phase);
        attempts[idx] += 1;
        let cost = model.cost.sample(rng);
        let days = model.duration_days.sample(rng);
        total_cost += cost;
        total_days += days;
        steps.push(TrajectoryStep {
            phase,
            attempt: attempts[idx],
            cost,
            duration_days: days,
            kind: StepKind::Attempt,
        });
        if total_days > plan.horizon_days {
            break;
        }
        let failed = model.failure_prob > 0.0 && rng.gen::<f64>() < model.failure_prob;
        if failed {
            let edge = model
                .feedback
                .expect("validated: failing phase has an edge");
            let fb_cost = plan.multiplier(edge.level) * model.feedback_cost.sample(rng);
            let fb_days = model.feedback_duration_days.sample(rng);
            total_cost += fb_cost;
            total_days += fb_days;
            steps.push(TrajectoryStep {
                phase,
                attempt: attempts[idx],
                cost: fb_cost,
                duration_days: fb_days,
                kind: StepKind::Feedback,
            });
            if total_days > plan.horizon_days {
                break;
            }
            idx = edge.target.index();
        } else {
            idx += 1;
        }
    }
    Trajectory {
        steps,
        total_cost,
        total_days,
        completed: idx >= Phase::ALL.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistSummary {
    pub mean: f64,
    pub min: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl DistSummary {
    fn from_samples(mut xs: Vec<f64>) -> DistSummary {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        // Nearest-rank percentile.
        let pct = |p: f64| xs[(((p / 100.0) * n as f64).ceil() as usize).clamp(1, n) - 1];
        DistSummary {
            mean,
            min: xs[0],
            p50: pct(50.0),
            p90: pct(90.0),
            p99: pct(99.0),
            max: xs[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifecycleReport {
    pub trajectories: u64,
    pub seed: u64,
    pub horizon_days: f64,
    pub cost: DistSummary,
    pub days: DistSummary,
    pub completion_fraction: f64,
}

impl std::fmt::Display for LifecycleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "lifecycle simulation: {} trajectories, seed {}, horizon {} days",
            self.trajectories, self.seed, self.horizon_days
        )?;
        writeln!(
            f,
            "completion within horizon: {:.4}",
            self.completion_fraction
        )?;
        writeln!(
            f,
            "          mean         p50          p90          p99          max"
        )?;
        writeln!(
            f,
            "cost  {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            self.cost.mean, self.cost.p50, self.cost.p90, self.cost.p99, self.cost.max
        )?;
        write!(
            f,
            "days  {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            self.days.mean, self.days.p50, self.days.p90, self.days.p99, self.days.max
        )
    }
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(
        sub_seed(seed, crate::rng::domain::LIFECYCLE) ^ mix64(index),
    ))
}

/// Run N independent trajectories and summarize cost, duration and
/// completion. Deterministic per seed; each trajectory has its own stream,
/// so the merge order never matters.
pub fn simulate_lifecycle(
    plan: &LifecyclePlan,
    n: u64,
    seed: u64,
) -> Result<LifecycleReport, LifecycleError> {
    if n == 0 {
        return Err(LifecycleError::InvalidPlan(
            "trajectory count must be >= 1".into(),
        ));
    }
    plan.validate()?;
    let mut costs = Vec::with_capacity(n as usize);
    let mut days = Vec::with_capacity(n as usize);
    let mut completed = 0u64;
    for i in 0..n {
        let mut rng = trajectory_rng(seed, i);
        let t = simulate_trajectory(plan, &mut rng);
        costs.push(t.total_cost);
        days.push(t.total_days);
        if t.completed {
            completed += 1;
        }
    }
    Ok(LifecycleReport {
        trajectories: n,
        seed,
        horizon_days: plan.horizon_days,
        cost: DistSummary::from_samples(costs),
        days: DistSummary::from_samples(days),
        completion_fraction: completed as f64 / n as f64,
    })
}

/// Expected benefit minus expected cost and cost-convertible resources.
pub fn net_benefit(expected_benefit: f64, expected_cost: f64, convertible_resources: f64) -> f64 {
    expected_benefit - expected_cost - convertible_resources
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThresholds {
    /// Required fraction of samples with nonnegative net benefit.
    pub conf_net_benefit: f64,
    /// Required fraction of successful implementation samples.
    pub conf_implementation: f64,
    /// Implementation-failure fraction beyond which the phase feeds back.
    pub abort_failure_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionInputs {
    pub net_benefit_samples: Vec<f64>,
    pub implementation_success_samples: Vec<bool>,
    pub thresholds: DecisionThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum AdvanceDecision {
    Advance,
    Hold,
    Feedback {
        target: Phase,
        level: ExpenditureLevel,
    },
}

/// Decide whether the current phase may advance. Advance requires both
/// confidences to reach their thresholds (inclusive); an implementation
/// failure fraction beyond the abort bound takes the phase's feedback edge.
pub fn advance(
    current: Phase,
    inputs: &DecisionInputs,
    plan: &LifecyclePlan,
) -> Result<AdvanceDecision, LifecycleError> {
    if inputs.net_benefit_samples.is_empty() || inputs.implementation_success_samples.is_empty() {
        return Err(LifecycleError::EmptySamples);
    }
    let conf_net = inputs
        .net_benefit_samples
        .iter()
        .filter(|x| **x >= 0.0)
        .count() as f64
        / inputs.net_benefit_samples.len() as f64;
    let conf_impl = inputs
        .implementation_success_samples
        .iter()
        .filter(|ok| **ok)
        .count() as f64
        / inputs.implementation_success_samples.len() as f64;
    if conf_net >= inputs.thresholds.conf_net_benefit
        && conf_impl >= inputs.thresholds.conf_implementation
    {
        return Ok(AdvanceDecision::Advance);
    }
    if 1.0 - conf_impl > inputs.thresholds.abort_failure_fraction {
        if let Some(edge) = &plan.model(current).feedback {
            return Ok(AdvanceDecision::Feedback {
                target: edge.target,
                level: edge.level,
            });
        }
    }
    Ok(AdvanceDecision::Hold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitionRecord {
    pub from: Phase,
    pub to: Phase,
    pub reason: String,
}

/// From Maintenance, switching is free: any phase is reachable, whatever the
/// expenditure level, for failure handling or upgrade requirements.
pub fn maintenance_switch(
    from: Phase,
    target: Phase,
    reason: &str,
) -> Result<TransitionRecord, LifecycleError> {
    if from != Phase::Maintenance {
        return Err(LifecycleError::NotInMaintenance(from));
    }
    Ok(TransitionRecord {
        from,
        to: target,
        reason: reason.to_owned(),
    })
}

/// An in-run maintenance expenditure posted by the monitor (restart at level
/// 1, field replacement at level 3), linking operations back to the
/// lifecycle cost ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceCostEntry {
    pub tick: Tick,
    pub node: DeviceId,
    pub action: String,
    pub level: u8,
    pub cost: f64,
}
