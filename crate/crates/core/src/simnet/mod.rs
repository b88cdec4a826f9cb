//! Discrete-event simulation of the gathering, processing and worker nodes.
//!
//! Everything runs on one [`VirtualClock`]; concurrency between the nodes
//! is modeled through scheduled events, never executed.

pub mod bus;
pub mod clock;
pub mod cost;
mod engine;
pub mod health;

use serde::{Deserialize, Serialize};

use crate::consensus::AggregationParams;
use crate::domain::{FrameMessage, ScoreThresholds, Tier};
use crate::error::{Error, Result};
use crate::fsm::FsmPolicyParams;
use crate::fusion::{BoostRuleTable, DiurnalBaselines};
use crate::provenance::LogEntry;

pub use bus::{topic_matches, Bus, Delivery, Topic};
pub use clock::VirtualClock;
pub use cost::{CostModel, Site, TierCost};
pub use health::{health_update, Breaker, HealthEvent, HealthParams, WorkerHealth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadPolicy {
    /// Every tier runs on the processing node.
    None,
    /// Non-nano tiers go to the worker while it is healthy.
    Adaptive,
    /// Adaptive, and fast motion always gets a medium offload.
    ForceMediumOnFast,
    /// Every frame is a medium offload while the worker is healthy.
    AlwaysMedium,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub ensemble_size: u8,
    /// Tiers the configuration may run, ascending.
    pub tiers: Vec<Tier>,
    pub fsm_enabled: bool,
    pub fusion_enabled: bool,
    pub offload_policy: OffloadPolicy,
    pub worker_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 3,
            tiers: Tier::ALL.to_vec(),
            fsm_enabled: true,
            fusion_enabled: true,
            offload_policy: OffloadPolicy::Adaptive,
            worker_enabled: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.ensemble_size) {
            return Err(Error::InvalidParam(format!(
                "ensemble_size must be 1..=3, got {}",
                self.ensemble_size
            )));
        }
        if self.tiers.is_empty() || self.tiers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam(
                "tiers must be non-empty and strictly ascending".into(),
            ));
        }
        if self.offload_policy == OffloadPolicy::AlwaysMedium && !self.tiers.contains(&Tier::Medium) {
            return Err(Error::InvalidParam("always_medium needs the medium tier".into()));
        }
        Ok(())
    }

    /// Largest allowed tier not above `tier`, else the smallest allowed.
    pub fn clamp_tier(&self, tier: Tier) -> Tier {
        self.tiers
            .iter()
            .rev()
            .find(|t| **t <= tier)
            .or(self.tiers.first())
            .copied()
            .unwrap_or(Tier::Nano)
    }

    pub fn max_tier(&self) -> Tier {
        self.tiers.last().copied().unwrap_or(Tier::Nano)
    }

    /// Tiers every ingress frame must carry.
    pub fn required_tiers(&self) -> Vec<Tier> {
        let mut t = self.tiers.clone();
        if self.offload_policy != OffloadPolicy::None && !t.contains(&Tier::Nano) {
            t.insert(0, Tier::Nano);
        }
        t
    }
}

/// Scripted worker silence: the worker stops at `kill_at_ms` and, if given,
/// comes back at `revive_at_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerOutage {
    pub kill_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revive_at_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub pipeline: PipelineConfig,
    pub aggregation: AggregationParams,
    pub fsm: FsmPolicyParams,
    pub thresholds: ScoreThresholds,
    pub boost_rules: BoostRuleTable,
    pub cost: CostModel,
    pub health: HealthParams,
    pub offload_timeout_ms: u64,
    pub frame_interval_ms: u64,
    pub seed: u64,
    pub max_pending_events: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub worker_outages: Vec<WorkerOutage>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            aggregation: AggregationParams::default(),
            fsm: FsmPolicyParams::default(),
            thresholds: ScoreThresholds::default(),
            boost_rules: BoostRuleTable::default(),
            cost: CostModel::default(),
            health: HealthParams::default(),
            offload_timeout_ms: 2000,
            frame_interval_ms: 1000,
            seed: 0,
            max_pending_events: 10_000,
            worker_outages: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.aggregation.validate()?;
        self.fsm.validate()?;
        self.cost.validate()?;
        // negated so NaN thresholds are rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.thresholds.watch < self.thresholds.flood) {
            return Err(Error::InvalidParam(
                "watch threshold must be below flood threshold".into(),
            ));
        }
        if self.frame_interval_ms == 0 || self.offload_timeout_ms == 0 {
            return Err(Error::InvalidParam(
                "frame interval and timeout must be positive".into(),
            ));
        }
        if self.health.heartbeat_period_ms == 0 || self.health.miss_limit == 0 {
            return Err(Error::InvalidParam(
                "heartbeat period and miss limit must be positive".into(),
            ));
        }
        for o in &self.worker_outages {
            if o.revive_at_ms.is_some_and(|r| r <= o.kill_at_ms) {
                return Err(Error::InvalidParam("worker revive must follow kill".into()));
            }
        }
        Ok(())
    }
}

/// Publication instants for `count` frames emitted at a fixed interval.
pub fn emission_times(count: usize, frame_interval_ms: u64) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::EmptySequence);
    }
    Ok((0..count as u64).map(|i| i * frame_interval_ms).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    LocalInference,
    WorkerInference,
    Transfer,
    WorkerResident,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyItem {
    pub at_ms: u64,
    pub kind: EnergyKind,
    pub frame_id: u64,
    pub joules: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Processing node idle draw integrated over the run.
    pub idle_j: f64,
    pub items: Vec<EnergyItem>,
}

impl EnergyLedger {
    pub fn itemized_j(&self) -> f64 {
        self.items.iter().map(|i| i.joules).sum()
    }

    pub fn total_j(&self) -> f64 {
        self.idle_j + self.itemized_j()
    }

    pub fn frame_j(&self, frame_id: u64) -> f64 {
        self.items
            .iter()
            .filter(|i| i.frame_id == frame_id)
            .map(|i| i.joules)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub emitted: u64,
    pub decided: u64,
    pub dropped: u64,
    pub rejected: u64,
}

impl FrameCounts {
    pub fn conserved(&self) -> bool {
        self.decided + self.dropped + self.rejected == self.emitted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub at_ms: u64,
    pub what: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: Vec<LogEntry>,
    pub trace: Vec<TraceEvent>,
    pub energy: EnergyLedger,
    pub counts: FrameCounts,
    /// Publication instants on `inference/request`.
    pub offload_requests_ms: Vec<u64>,
    /// Instants at which the processing node received a heartbeat.
    pub heartbeats_seen_ms: Vec<u64>,
    /// Instant the last frame was resolved.
    pub end_ms: u64,
    pub max_buffered_frames: usize,
    pub max_worker_queue: usize,
    pub config_fingerprint: String,
}

impl RunOutput {
    pub fn offload_jobs(&self) -> u64 {
        self.offload_requests_ms.len() as u64
    }
}

/// Runs one scenario to completion. `frames` already carry any sensor
/// injections; `baselines` is the store the processing node starts from.
pub fn run(frames: &[FrameMessage], baselines: &DiurnalBaselines, config: &SimConfig) -> Result<RunOutput> {
    config.validate()?;
    engine::World::new(frames, baselines, config)?.run()
}
