//! Human-editable scenario files and their resolution into a runnable
//! simulation.
//!
//! Paths inside a scenario are relative to the directory holding it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::ScoreThresholds;
use crate::error::{Error, Result};
use crate::evalkit::{
    ablation, cell_config, default_baselines, read_sequence, AblationConfig, NamedSequence, SensorVariant,
};
use crate::evalkit::{MetricOptions, RunMetrics, RunSamples};
use crate::fsm::FsmPolicyParams;
use crate::fusion::DiurnalBaselines;
use crate::provenance::{relative_path, write_log, RunArtifact};
use crate::simnet::{self, CostModel, RunOutput, SimConfig, WorkerOutage};

fn neutral() -> SensorVariant {
    SensorVariant::Neutral
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub sequence: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<PathBuf>,
    /// Ablation id or name.
    pub ablation: String,
    #[serde(default = "neutral")]
    pub variant: SensorVariant,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_interval_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outages: Vec<WorkerOutage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ScoreThresholds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsm: Option<FsmPolicyParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_model: Option<CostModel>,
}

impl Scenario {
    pub fn new(sequence: impl Into<PathBuf>, ablation: &str, seed: u64) -> Self {
        Self {
            sequence: sequence.into(),
            baselines: None,
            ablation: ablation.to_string(),
            variant: SensorVariant::Neutral,
            seed,
            timeout_ms: None,
            frame_interval_ms: None,
            outages: Vec::new(),
            thresholds: None,
            fsm: None,
            cost_model: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Loads inputs referenced by the scenario; `base_dir` anchors relative paths.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedScenario> {
        let ablation = ablation::by_id(&self.ablation)?;
        let sequence_path = base_dir.join(&self.sequence);
        let frames = read_sequence(&sequence_path)?;
        let name = frames[0].frame.sequence_id.clone();
        let (baselines_path, baselines) = match &self.baselines {
            Some(p) => {
                let path = base_dir.join(p);
                let b = DiurnalBaselines::load(&path)?;
                (Some(path), b)
            }
            None => (None, default_baselines()),
        };
        let defaults = SimConfig::default();
        let base = SimConfig {
            offload_timeout_ms: self.timeout_ms.unwrap_or(defaults.offload_timeout_ms),
            frame_interval_ms: self.frame_interval_ms.unwrap_or(defaults.frame_interval_ms),
            thresholds: self.thresholds.unwrap_or(defaults.thresholds),
            fsm: self.fsm.unwrap_or(defaults.fsm),
            cost: self.cost_model.clone().unwrap_or_else(|| defaults.cost.clone()),
            worker_outages: self.outages.clone(),
            ..defaults
        };
        let config = cell_config(&base, &ablation, &name, self.variant, self.seed);
        config.validate()?;
        Ok(ResolvedScenario {
            scenario: self.clone(),
            ablation,
            sequence_path,
            baselines_path,
            sequence: NamedSequence::new(name, frames),
            baselines,
            config,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub scenario: Scenario,
    pub ablation: AblationConfig,
    pub sequence_path: PathBuf,
    pub baselines_path: Option<PathBuf>,
    pub sequence: NamedSequence,
    pub baselines: DiurnalBaselines,
    pub config: SimConfig,
}

impl ResolvedScenario {
    pub fn run(&self) -> Result<RunOutput> {
        simnet::run(
            &self.sequence.messages(self.scenario.variant),
            &self.baselines,
            &self.config,
        )
    }

    /// Runs the scenario and stores decisions, metrics and the config
    /// snapshot in `run_dir`.
    pub fn execute(&self, run_dir: &Path) -> Result<(RunOutput, RunMetrics)> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let output = self.run()?;
        let samples = RunSamples::collect(&output, &self.sequence.truth())?;
        let metrics = RunMetrics::from_samples(&samples, &MetricOptions::default())?;
        let artifact = RunArtifact::new(run_dir);
        let write = |path: PathBuf, text: String| fs::write(&path, text).map_err(|e| Error::io(&path, e));
        write(artifact.decisions_path(), write_log(&output.log)?)?;
        write(artifact.metrics_path(), serde_json::to_string_pretty(&metrics)? + "\n")?;
        self.snapshot(run_dir).save(&artifact.config_path())?;
        Ok((output, metrics))
    }

    /// Fully explicit copy of the scenario whose paths are relative to
    /// `run_dir`, for storing next to the run's outputs.
    pub fn snapshot(&self, run_dir: &Path) -> Scenario {
        Scenario::explicit(
            relative_path(&self.sequence_path, run_dir),
            self.baselines_path.as_ref().map(|p| relative_path(p, run_dir)),
            &self.ablation.id,
            self.scenario.variant,
            self.scenario.seed,
            &self.config,
        )
    }
}

impl Scenario {
    /// Scenario with every tunable section spelled out from `config`.
    pub fn explicit(
        sequence: PathBuf,
        baselines: Option<PathBuf>,
        ablation: &str,
        variant: SensorVariant,
        seed: u64,
        config: &SimConfig,
    ) -> Scenario {
        Scenario {
            sequence,
            baselines,
            ablation: ablation.to_string(),
            variant,
            seed,
            timeout_ms: Some(config.offload_timeout_ms),
            frame_interval_ms: Some(config.frame_interval_ms),
            outages: config.worker_outages.clone(),
            thresholds: Some(config.thresholds),
            fsm: Some(config.fsm),
            cost_model: Some(config.cost.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::{generate, generator, write_sequence};

    fn fixture() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("sequences/slow_no_water.jsonl");
        let frames = generate(generator::script("slow_no_water").unwrap(), 2).unwrap();
        write_sequence(&seq, &frames).unwrap();
        let scen = dir.path().join("scenario.toml");
        let mut s = Scenario::new("sequences/slow_no_water.jsonl", "production", 4);
        s.timeout_ms = Some(1500);
        s.save(&scen).unwrap();
        (dir, scen)
    }

    #[test]
    fn loads_and_runs_relative_to_file() {
        let (dir, scen) = fixture();
        let s = Scenario::load(&scen).unwrap();
        let r = s.resolve(dir.path()).unwrap();
        assert_eq!(r.config.offload_timeout_ms, 1500);
        assert_eq!(r.ablation.name, "production");
        let out = r.run().unwrap();
        assert!(out.counts.conserved());
    }

    #[test]
    fn snapshot_round_trips_and_reproduces() {
        let (dir, scen) = fixture();
        let r = Scenario::load(&scen).unwrap().resolve(dir.path()).unwrap();
        let run_dir = dir.path().join("results/run-1");
        fs::create_dir_all(&run_dir).unwrap();
        let snap = r.snapshot(&run_dir);
        assert_eq!(snap.sequence, PathBuf::from("../../sequences/slow_no_water.jsonl"));
        let path = run_dir.join("config.toml");
        snap.save(&path).unwrap();
        let again = Scenario::load(&path).unwrap().resolve(&run_dir).unwrap();
        assert_eq!(again.config, r.config);
    }

    #[test]
    fn unknown_keys_and_ablations_are_errors() {
        assert!(toml::from_str::<Scenario>("sequence='a'\nablation='4'\nseed=1\nbogus=2\n").is_err());
        let (dir, _) = fixture();
        let s = Scenario::new("sequences/slow_no_water.jsonl", "nope", 1);
        assert!(matches!(s.resolve(dir.path()), Err(Error::Unknown { .. })));
        let s = Scenario::new("sequences/missing.jsonl", "4", 1);
        assert!(matches!(s.resolve(dir.path()), Err(Error::MissingInput(_))));
    }
}
