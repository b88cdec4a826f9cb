//! Ablation matrix runner and table rendering.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{FrameMessage, HazardLabel};
use crate::error::Result;
use crate::fusion::DiurnalBaselines;
use crate::provenance::LogEntry;
use crate::simnet::{self, SimConfig};

use super::ablation::AblationConfig;
use super::generator::SequenceFrame;
use super::metrics::{MetricOptions, RunMetrics, RunSamples};
use super::variant::SensorVariant;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedSequence {
    pub name: String,
    pub frames: Vec<SequenceFrame>,
}

impl NamedSequence {
    pub fn new(name: impl Into<String>, frames: Vec<SequenceFrame>) -> Self {
        Self {
            name: name.into(),
            frames,
        }
    }

    /// Ingress messages with the variant's injection applied.
    pub fn messages(&self, variant: SensorVariant) -> Vec<FrameMessage> {
        let raw: Vec<FrameMessage> = self.frames.iter().map(|f| f.frame.clone()).collect();
        variant.apply(&raw)
    }

    pub fn truth(&self) -> BTreeMap<u64, HazardLabel> {
        self.frames.iter().map(|f| (f.frame.frame_id, f.truth)).collect()
    }
}

/// Seed for one cell, independent of execution order.
pub fn cell_seed(seed: u64, config_id: &str, sequence: &str, variant: SensorVariant) -> u64 {
    let digest = Sha256::digest(format!("{seed}|{config_id}|{sequence}|{variant}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// `base` specialised to one cell.
pub fn cell_config(
    base: &SimConfig,
    ablation: &AblationConfig,
    sequence: &str,
    variant: SensorVariant,
    seed: u64,
) -> SimConfig {
    SimConfig {
        pipeline: ablation.pipeline.clone(),
        seed: cell_seed(seed, &ablation.id, sequence, variant),
        ..base.clone()
    }
}

#[derive(Debug, Clone)]
pub struct MatrixSpec {
    pub configs: Vec<AblationConfig>,
    pub sequences: Vec<NamedSequence>,
    pub variants: Vec<SensorVariant>,
    /// Shared parameters; the pipeline and seed fields are replaced per cell.
    pub base: SimConfig,
    pub baselines: DiurnalBaselines,
    pub seed: u64,
    pub metrics: MetricOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub config_id: String,
    pub config_name: String,
    pub sequence: String,
    pub variant: SensorVariant,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub config: SimConfig,
    pub samples: RunSamples,
    pub metrics: RunMetrics,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub key: CellKey,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixResult {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

pub fn run_cell(
    spec: &MatrixSpec,
    ablation: &AblationConfig,
    sequence: &NamedSequence,
    variant: SensorVariant,
) -> Result<CellResult> {
    let config = cell_config(&spec.base, ablation, &sequence.name, variant, spec.seed);
    let output = simnet::run(&sequence.messages(variant), &spec.baselines, &config)?;
    let samples = RunSamples::collect(&output, &sequence.truth())?;
    let metrics = RunMetrics::from_samples(&samples, &spec.metrics)?;
    Ok(CellResult {
        key: CellKey {
            config_id: ablation.id.clone(),
            config_name: ablation.name.clone(),
            sequence: sequence.name.clone(),
            variant,
        },
        config,
        samples,
        metrics,
        log: output.log,
    })
}

/// One simulation per (config, sequence, variant), in parallel. Cells come
/// back in config, sequence, variant order; failed cells are listed, not
/// dropped silently.
pub fn run_matrix(spec: &MatrixSpec) -> MatrixResult {
    let jobs: Vec<(&AblationConfig, &NamedSequence, SensorVariant)> = spec
        .configs
        .iter()
        .flat_map(|c| {
            spec.sequences
                .iter()
                .flat_map(move |s| spec.variants.iter().map(move |v| (c, s, *v)))
        })
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|(c, s, v)| (c, s, v, run_cell(spec, c, s, *v)))
        .collect();
    let mut result = MatrixResult::default();
    for (c, s, v, outcome) in outcomes {
        match outcome {
            Ok(cell) => result.cells.push(cell),
            Err(e) => result.failures.push(CellFailure {
                key: CellKey {
                    config_id: c.id.clone(),
                    config_name: c.name.clone(),
                    sequence: s.name.clone(),
                    variant: *v,
                },
                error: e.to_string(),
            }),
        }
    }
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config_id: String,
    pub config_name: String,
    pub variant: SensorVariant,
    pub sequences: Vec<String>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub key: CellKey,
    pub metrics: RunMetrics,
}

/// Everything `report` needs to re-render tables without simulating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub seed: u64,
    pub cells: Vec<CellSummary>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
}

impl MatrixResult {
    pub fn cell(&self, config_id: &str, sequence: &str, variant: SensorVariant) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.key.config_id == config_id && c.key.sequence == sequence && c.key.variant == variant)
    }

    /// Pooled rows per config for one variant, over the sequences every
    /// config completed.
    pub fn aggregate(&self, variant: SensorVariant, opts: &MetricOptions) -> Result<Vec<AggregateRow>> {
        let cells: Vec<&CellResult> = self.cells.iter().filter(|c| c.key.variant == variant).collect();
        let mut configs: Vec<(String, String)> = Vec::new();
        for c in &cells {
            let k = (c.key.config_id.clone(), c.key.config_name.clone());
            if !configs.contains(&k) {
                configs.push(k);
            }
        }
        let per_config = |id: &str| -> BTreeSet<&str> {
            cells
                .iter()
                .filter(|c| c.key.config_id == id)
                .map(|c| c.key.sequence.as_str())
                .collect()
        };
        let Some(mut common) = configs.first().map(|(id, _)| per_config(id)) else {
            return Ok(Vec::new());
        };
        for (id, _) in &configs[1..] {
            common = common.intersection(&per_config(id)).copied().collect();
        }
        let mut rows = Vec::new();
        for (id, name) in configs {
            let parts: Vec<&RunSamples> = cells
                .iter()
                .filter(|c| c.key.config_id == id && common.contains(c.key.sequence.as_str()))
                .map(|c| &c.samples)
                .collect();
            if parts.is_empty() {
                continue;
            }
            let merged = RunSamples::merge(&parts);
            rows.push(AggregateRow {
                config_id: id,
                config_name: name,
                variant,
                sequences: common.iter().map(|s| s.to_string()).collect(),
                metrics: RunMetrics::from_samples(&merged, opts)?,
            });
        }
        Ok(rows)
    }

    pub fn report(&self, seed: u64, opts: &MetricOptions) -> Result<MatrixReport> {
        let variants: BTreeSet<SensorVariant> = self.cells.iter().map(|c| c.key.variant).collect();
        let mut aggregates = Vec::new();
        for v in variants {
            aggregates.extend(self.aggregate(v, opts)?);
        }
        Ok(MatrixReport {
            seed,
            cells: self
                .cells
                .iter()
                .map(|c| CellSummary {
                    key: c.key.clone(),
                    metrics: c.metrics.clone(),
                })
                .collect(),
            aggregates,
            failures: self.failures.clone(),
        })
    }
}

pub const OVERALL_HEADERS: [&str; 7] = [
    "ID",
    "Configuration",
    "Total Energy (J)",
    "Macro F1 (2-class)",
    "Balanced Accuracy",
    "p99 Lat. (ms)",
    "Temporal Coverage",
];

pub const FUSION_HEADERS: [&str; 5] = ["Variant", "Frames", "Temp. Cov.", "Flood R.", "Watch R."];

pub fn overall_rows(rows: &[AggregateRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.config_id.clone(),
                r.config_name.clone(),
                format!("{:.1}", m.total_energy_j),
                format!("{:.3}", m.classification.macro_f1),
                format!("{:.3}", m.classification.balanced_accuracy),
                format!("{:.1}", m.p99_latency_ms as f64),
                format!("{:.3}", m.temporal_coverage),
            ]
        })
        .collect()
}

fn variant_title(v: SensorVariant) -> &'static str {
    match v {
        SensorVariant::Neutral => "Neutral",
        SensorVariant::RealWet => "Real-wet",
        SensorVariant::AntiFlood => "Anti-flood",
    }
}

/// One row per variant for a fixed config and sequence, neutral first.
pub fn fusion_rows(cells: &[CellSummary], config_id: &str, sequence: &str) -> Vec<Vec<String>> {
    let order = [SensorVariant::Neutral, SensorVariant::RealWet, SensorVariant::AntiFlood];
    order
        .iter()
        .filter_map(|v| {
            cells
                .iter()
                .find(|c| c.key.config_id == config_id && c.key.sequence == sequence && c.key.variant == *v)
        })
        .map(|c| {
            let m = &c.metrics;
            vec![
                variant_title(c.key.variant).to_string(),
                m.counts.decided.to_string(),
                format!("{:.3}", m.temporal_coverage),
                format!("{:.3}", m.classification.flood_recall),
                format!("{:.3}", m.classification.watch_recall),
            ]
        })
        .collect()
}

/// Space-aligned text table; text columns left-aligned, numbers right.
pub fn render_text(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let numeric = |col: usize| rows.iter().all(|r| r[col].parse::<f64>().is_ok()) && !rows.is_empty();
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if numeric(i) {
                    format!("{c:>w$}", w = widths[i])
                } else {
                    format!("{c:<w$}", w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n");
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

pub fn render_csv(headers: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
