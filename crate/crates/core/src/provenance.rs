//! Per-frame decision log, storage layout and byte-exact replay.
//!
//! Every line of `decisions.jsonl` is one [`LogEntry`] in canonical form:
//! struct field order is the key order, floats use shortest round-trip
//! decimal formatting and the line ends with `\n`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ConsensusBox, HazardLabel, ModelId, Tier};
use crate::error::{Error, Result};
use crate::fsm::StateId;
use crate::fusion::Anomalies;

pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const INVOCATION_FILE: &str = "invocation.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub frame_id: u64,
    pub sequence_id: String,
    pub ingest_ms: u64,
    pub decide_ms: u64,
    pub fsm_before: StateId,
    pub fsm_after: StateId,
    pub fsm_anchor: StateId,
    pub tier: Tier,
    pub offload: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    pub detection_counts: BTreeMap<ModelId, u32>,
    pub consensus: Vec<ConsensusBox>,
    pub image_score: f64,
    pub anomalies: Anomalies,
    pub sensor_boost: f64,
    pub combined_score: f64,
    pub label: HazardLabel,
    pub fallback: bool,
    pub config_fingerprint: String,
    pub energy_j: f64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// Displaced from the single-slot buffer by a newer frame.
    Dropped,
    /// Failed ingress validation.
    Rejected,
}

/// Mark for a frame that never received a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub frame_id: u64,
    pub sequence_id: String,
    pub ingest_ms: u64,
    pub at_ms: u64,
    pub disposition: Disposition,
    pub reason: String,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Decision(DecisionRecord),
    Skip(SkipRecord),
}

impl LogEntry {
    pub fn frame_id(&self) -> u64 {
        match self {
            LogEntry::Decision(d) => d.frame_id,
            LogEntry::Skip(s) => s.frame_id,
        }
    }

    pub fn as_decision(&self) -> Option<&DecisionRecord> {
        match self {
            LogEntry::Decision(d) => Some(d),
            LogEntry::Skip(_) => None,
        }
    }
}

impl DecisionRecord {
    pub fn check(&self) -> Result<()> {
        if self.combined_score != self.image_score + self.sensor_boost {
            return Err(Error::RecordInvariant(format!(
                "frame {}: combined_score {} != image_score {} + sensor_boost {}",
                self.frame_id, self.combined_score, self.image_score, self.sensor_boost
            )));
        }
        let floats = [
            self.image_score,
            self.sensor_boost,
            self.combined_score,
            self.energy_j,
            self.anomalies.delta_t,
            self.anomalies.delta_rh,
            self.anomalies.delta_p,
        ];
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(Error::RecordInvariant(format!(
                "frame {}: non-finite value",
                self.frame_id
            )));
        }
        if self.offload != self.job_id.is_some() {
            return Err(Error::RecordInvariant(format!(
                "frame {}: job_id present iff offloaded",
                self.frame_id
            )));
        }
        Ok(())
    }
}

/// Canonical single-line serialization, newline-terminated.
pub fn write_record(entry: &LogEntry) -> Result<String> {
    if let LogEntry::Decision(d) = entry {
        d.check()?;
    }
    let mut line = serde_json::to_string(entry)?;
    line.push('\n');
    Ok(line)
}

pub fn parse_record(line: &str) -> Result<LogEntry> {
    Ok(serde_json::from_str(line.trim_end_matches('\n'))?)
}

pub fn write_log(entries: &[LogEntry]) -> Result<String> {
    entries.iter().map(write_record).collect()
}

/// Short content digest of any serializable configuration.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

/// `storage/data/` for inputs and `storage/data_results/<run-id>/` for outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageLayout {
    pub root: PathBuf,
}

impl StorageLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn sequences_dir(&self) -> PathBuf {
        self.data_dir().join("sequences")
    }

    pub fn scenarios_dir(&self) -> PathBuf {
        self.data_dir().join("scenarios")
    }

    pub fn baselines_path(&self) -> PathBuf {
        self.data_dir().join("baselines.toml")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("data_results")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.results_dir().join(run_id)
    }
}

/// A stored run: the scenario snapshot that produced it and its log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifact {
    pub run_dir: PathBuf,
}

impl RunArtifact {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: run_dir.into(),
        }
    }

    pub fn config_path(&self) -> PathBuf {
        self.run_dir.join(CONFIG_FILE)
    }

    pub fn decisions_path(&self) -> PathBuf {
        self.run_dir.join(DECISIONS_FILE)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.run_dir.join(METRICS_FILE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    Identical {
        lines: usize,
    },
    Divergent {
        /// 1-based line number of the first difference.
        line: usize,
        frame_id: Option<u64>,
        stored: Option<String>,
        regenerated: Option<String>,
    },
}

impl ReplayVerdict {
    pub fn is_identical(&self) -> bool {
        matches!(self, ReplayVerdict::Identical { .. })
    }
}

/// Byte comparison of two logs, reporting the first differing line.
pub fn compare_logs(stored: &str, regenerated: &str) -> ReplayVerdict {
    if stored == regenerated {
        return ReplayVerdict::Identical {
            lines: stored.lines().count(),
        };
    }
    let mut a = stored.split_inclusive('\n');
    let mut b = regenerated.split_inclusive('\n');
    let mut line = 0;
    loop {
        line += 1;
        let (x, y) = (a.next(), b.next());
        if x != y {
            let frame_id = y
                .and_then(|l| parse_record(l).ok())
                .or_else(|| x.and_then(|l| parse_record(l).ok()))
                .map(|e| e.frame_id())
                .or_else(|| x.and_then(extract_frame_id));
            return ReplayVerdict::Divergent {
                line,
                frame_id,
                stored: x.map(str::to_string),
                regenerated: y.map(str::to_string),
            };
        }
        if x.is_none() {
            unreachable!("unequal logs must differ on some line");
        }
    }
}

fn extract_frame_id(line: &str) -> Option<u64> {
    let rest = line.split("\"frame_id\":").nth(1)?;
    rest.chars()
        .take_while(|c| c.is_ascii_digit())
        .collect::<String>()
        .parse()
        .ok()
}

/// Re-executes the stored scenario snapshot and compares logs byte-wise.
pub fn replay(run: &RunArtifact) -> Result<ReplayVerdict> {
    let config = run.config_path();
    let decisions = run.decisions_path();
    for p in [&config, &decisions] {
        if !p.exists() {
            return Err(Error::MissingInput(p.clone()));
        }
    }
    let scenario = crate::scenario::Scenario::load(&config)?;
    let resolved = scenario.resolve(&run.run_dir)?;
    let output = resolved.run()?;
    let regenerated = write_log(&output.log)?;
    let stored = fs::read_to_string(&decisions).map_err(|e| Error::io(&decisions, e))?;
    Ok(compare_logs(&stored, &regenerated))
}

/// `target` expressed relative to directory `base`; both made absolute first.
pub fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| -> PathBuf {
        let p = if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir().unwrap_or_default().join(p)
        };
        normalize(&p)
    };
    let (t, b) = (abs(target), abs(base));
    let tc: Vec<_> = t.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return t;
    }
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c.as_os_str());
    }
    out
}

fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}
