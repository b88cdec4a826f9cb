//! Parameterized latency and energy model standing in for hardware
//! measurements.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::domain::Tier;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierCost {
    /// Single-model inference latency, ms.
    pub latency_ms: f64,
    /// Single-model inference energy, J.
    pub energy_j: f64,
}

const fn cost(latency_ms: f64, energy_j: f64) -> TierCost {
    TierCost { latency_ms, energy_j }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Processing node CPU.
    Local,
    /// Accelerator worker.
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Tier tables merge over the defaults, so a file may list one tier.
    #[serde(deserialize_with = "local_table")]
    pub local: BTreeMap<Tier, TierCost>,
    #[serde(deserialize_with = "worker_table")]
    pub worker: BTreeMap<Tier, TierCost>,
    /// Latency added per ensemble member beyond the first, as a fraction of
    /// the single-model latency.
    pub extra_model_latency: f64,
    /// Energy added per ensemble member beyond the first, same convention.
    pub extra_model_energy: f64,
    /// Uniform latency jitter, ± this fraction.
    pub jitter: f64,
    /// Network round trip for one offload (request + response), ms.
    pub transfer_ms: f64,
    /// Network energy for one offload round trip, J.
    pub transfer_j: f64,
    pub processing_idle_w: f64,
    /// Worker draw while a job is resident (queued or running), W.
    pub worker_resident_w: f64,
}

fn merged<'de, D: Deserializer<'de>>(
    d: D,
    mut base: BTreeMap<Tier, TierCost>,
) -> std::result::Result<BTreeMap<Tier, TierCost>, D::Error> {
    base.extend(BTreeMap::<Tier, TierCost>::deserialize(d)?);
    Ok(base)
}

fn local_table<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<Tier, TierCost>, D::Error> {
    merged(d, CostModel::default().local)
}

fn worker_table<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<Tier, TierCost>, D::Error> {
    merged(d, CostModel::default().worker)
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            local: [
                (Tier::Nano, cost(750.0, 0.35)),
                (Tier::Small, cost(1800.0, 0.9)),
                (Tier::Medium, cost(3600.0, 2.0)),
                (Tier::Large, cost(6500.0, 3.8)),
            ]
            .into(),
            worker: [
                (Tier::Small, cost(150.0, 1.2)),
                (Tier::Medium, cost(260.0, 2.0)),
                (Tier::Large, cost(420.0, 2.4)),
            ]
            .into(),
            extra_model_latency: 0.5,
            extra_model_energy: 0.0,
            jitter: 0.1,
            transfer_ms: 40.0,
            transfer_j: 0.15,
            processing_idle_w: 2.2,
            worker_resident_w: 0.5,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (site, table) in [("local", &self.local), ("worker", &self.worker)] {
            let mut prev: Option<&TierCost> = None;
            for (tier, c) in table {
                if !(c.latency_ms >= 0.0 && c.energy_j >= 0.0) {
                    return Err(Error::InvalidParam(format!("{site} {tier}: negative cost")));
                }
                if let Some(p) = prev {
                    if !(c.latency_ms > p.latency_ms && c.energy_j > p.energy_j) {
                        return Err(Error::InvalidParam(format!(
                            "{site} costs must strictly increase with tier (at {tier})"
                        )));
                    }
                }
                prev = Some(c);
            }
        }
        if !self.local.contains_key(&Tier::Nano) {
            return Err(Error::InvalidParam("local nano cost required".into()));
        }
        if self.worker.contains_key(&Tier::Nano) {
            return Err(Error::InvalidParam("nano never runs on the worker".into()));
        }
        let scalars = [
            self.extra_model_latency,
            self.extra_model_energy,
            self.jitter,
            self.transfer_ms,
            self.transfer_j,
            self.processing_idle_w,
            self.worker_resident_w,
        ];
        if scalars.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.jitter >= 1.0 {
            return Err(Error::InvalidParam(
                "cost scalars must be finite and >= 0, jitter < 1".into(),
            ));
        }
        Ok(())
    }

    pub fn tier_cost(&self, site: Site, tier: Tier) -> Result<TierCost> {
        let table = match site {
            Site::Local => &self.local,
            Site::Worker => &self.worker,
        };
        table
            .get(&tier)
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("no {site:?} cost for tier {tier}")))
    }

    fn ensemble_factor(per_model: f64, models: u8) -> f64 {
        1.0 + per_model * (models.max(1) - 1) as f64
    }

    /// Deterministic given the generator state; one draw per call.
    pub fn inference_ms(&self, site: Site, tier: Tier, models: u8, rng: &mut impl Rng) -> Result<u64> {
        let base = self.tier_cost(site, tier)?.latency_ms * Self::ensemble_factor(self.extra_model_latency, models);
        let u: f64 = rng.gen_range(-1.0..=1.0);
        Ok((base * (1.0 + self.jitter * u)).round().max(1.0) as u64)
    }

    pub fn inference_j(&self, site: Site, tier: Tier, models: u8) -> Result<f64> {
        Ok(self.tier_cost(site, tier)?.energy_j * Self::ensemble_factor(self.extra_model_energy, models))
    }

    pub fn one_way_ms(&self) -> u64 {
        (self.transfer_ms / 2.0).round() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_is_valid_and_monotone() {
        CostModel::default().validate().unwrap();
    }

    #[test]
    fn rejects_non_monotone() {
        let mut m = CostModel::default();
        m.worker.insert(Tier::Large, cost(100.0, 5.0));
        assert!(m.validate().is_err());
        let mut m = CostModel::default();
        m.worker.insert(Tier::Nano, cost(1.0, 0.1));
        assert!(m.validate().is_err());
    }

    #[test]
    fn jitter_is_bounded_and_seeded() {
        let m = CostModel::default();
        let draw = |seed| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| m.inference_ms(Site::Worker, Tier::Medium, 3, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
        for v in draw(2) {
            assert!((468..=572).contains(&v), "{v}");
        }
    }

    #[test]
    fn ensemble_scaling() {
        let m = CostModel::default();
        assert_eq!(m.inference_j(Site::Local, Tier::Nano, 1).unwrap(), 0.35);
        let m = CostModel {
            extra_model_energy: 0.1,
            ..m
        };
        assert!((m.inference_j(Site::Local, Tier::Nano, 3).unwrap() - 0.35 * 1.2).abs() < 1e-12);
    }

    #[test]
    fn toml_partial_override() {
        let m: CostModel = toml::from_str("jitter = 0.0\nprocessing_idle_w = 3.0\n").unwrap();
        assert_eq!(m.jitter, 0.0);
        assert_eq!(m.processing_idle_w, 3.0);
        assert_eq!(m.worker, CostModel::default().worker);
    }

    #[test]
    fn toml_single_tier_override_keeps_other_tiers() {
        let m: CostModel = toml::from_str("[worker.medium]\nlatency_ms = 300.0\nenergy_j = 2.2\n").unwrap();
        let d = CostModel::default();
        assert_eq!(m.worker[&Tier::Medium], cost(300.0, 2.2));
        assert_eq!(m.worker[&Tier::Large], d.worker[&Tier::Large]);
        assert_eq!(m.local, d.local);
        m.validate().unwrap();
    }
}
