//! The ten canonical ablation configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::Tier;
use crate::error::{Error, Result};
use crate::simnet::{OffloadPolicy, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub id: String,
    pub name: String,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

#[allow(clippy::too_many_arguments)]
fn row(
    id: &str,
    name: &str,
    ensemble_size: u8,
    tiers: &[Tier],
    fsm_enabled: bool,
    fusion_enabled: bool,
    offload_policy: OffloadPolicy,
    worker_enabled: bool,
) -> AblationConfig {
    AblationConfig {
        id: id.to_string(),
        name: name.to_string(),
        pipeline: PipelineConfig {
            ensemble_size,
            tiers: tiers.to_vec(),
            fsm_enabled,
            fusion_enabled,
            offload_policy,
            worker_enabled,
        },
    }
}

/// All ten rows, in table order.
pub fn canonical() -> Vec<AblationConfig> {
    use OffloadPolicy::*;
    use Tier::*;
    let all = Tier::ALL;
    vec![
        row("1", "static_small", 1, &[Small], false, false, None, false),
        row("1b", "static_nano", 1, &[Nano], false, false, None, false),
        row("2", "vision_fsm_multi", 3, &all, true, false, Adaptive, true),
        row("2b", "vision_fsm_single", 1, &all, true, false, Adaptive, true),
        row("3", "full_local_multi", 3, &[Nano], true, true, None, false),
        row("3b", "full_local_single", 1, &[Nano], true, true, None, false),
        row("4", "production", 3, &all, true, true, Adaptive, true),
        row("4b", "production_single", 1, &all, true, true, Adaptive, true),
        row("5", "fast_force_jetson", 3, &all, true, true, ForceMediumOnFast, true),
        row(
            "6",
            "always_offload_medium",
            1,
            &[Medium],
            false,
            false,
            AlwaysMedium,
            true,
        ),
    ]
}

/// Looks a configuration up by id (`4b`) or name (`production_single`).
pub fn by_id(key: &str) -> Result<AblationConfig> {
    canonical()
        .into_iter()
        .find(|c| c.id == key || c.name == key)
        .ok_or_else(|| Error::Unknown {
            kind: "ablation",
            value: key.to_string(),
        })
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.id, self.name)
    }
}

impl FromStr for AblationConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        by_id(s)
    }
}
