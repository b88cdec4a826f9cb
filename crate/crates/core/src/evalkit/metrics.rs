//! Classification, stability, latency and resource metrics for one run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{HazardLabel, Tier};
use crate::error::{Error, Result};
use crate::fsm::StateId;
use crate::provenance::LogEntry;
use crate::simnet::{FrameCounts, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binary {
    Flood,
    NonFlood,
}

/// Some Water merges into non-flood.
pub fn binarize(labels: &[HazardLabel]) -> Vec<Binary> {
    labels
        .iter()
        .map(|l| match l {
            HazardLabel::Flooded => Binary::Flood,
            _ => Binary::NonFlood,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
    pub flood_precision: f64,
    pub flood_recall: f64,
    pub watch_recall: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Confusion {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Confusion {
    /// A class absent from the truth has recall 1.
    fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// Never predicted: 1 if the class is also absent from the truth, else 0.
    fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            if self.fn_ == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Binary metrics over the merged classes plus three-class watch recall.
/// Inputs are aligned decided frames only.
pub fn classification_metrics(pred: &[HazardLabel], truth: &[HazardLabel]) -> Result<ClassificationMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::UndefinedMetrics(format!(
            "prediction/truth length mismatch {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetrics("no decided frames".into()));
    }
    let (bp, bt) = (binarize(pred), binarize(truth));
    let mut flood = Confusion::default();
    let mut dry = Confusion::default();
    for (p, t) in bp.iter().zip(&bt) {
        for (class, c) in [(Binary::Flood, &mut flood), (Binary::NonFlood, &mut dry)] {
            match (*p == class, *t == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let watch_truth = truth.iter().filter(|t| **t == HazardLabel::SomeWater).count();
    let watch_hit = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| **t == HazardLabel::SomeWater && **p == HazardLabel::SomeWater)
        .count();
    Ok(ClassificationMetrics {
        macro_f1: (flood.f1() + dry.f1()) / 2.0,
        balanced_accuracy: (flood.recall() + dry.recall()) / 2.0,
        flood_precision: flood.precision(),
        flood_recall: flood.recall(),
        watch_recall: if watch_truth == 0 {
            1.0
        } else {
            watch_hit as f64 / watch_truth as f64
        },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscillationMode {
    /// One-frame excursions that immediately revert.
    #[default]
    Flicker,
    /// Every label change.
    Transitions,
}

pub fn oscillation_count(labels: &[HazardLabel], mode: OscillationMode) -> u64 {
    match mode {
        OscillationMode::Flicker => labels.windows(3).filter(|w| w[1] != w[0] && w[2] == w[0]).count() as u64,
        OscillationMode::Transitions => labels.windows(2).filter(|w| w[0] != w[1]).count() as u64,
    }
}

fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Nearest-rank percentile; with `iqr_filter` values outside the
/// 1.5 × IQR fences are removed first.
pub fn percentile_latency(latencies: &[u64], p: f64, iqr_filter: bool) -> Result<u64> {
    if latencies.is_empty() {
        return Err(Error::UndefinedMetrics("no latencies".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParam(format!("percentile {p} outside 0..=100")));
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    if iqr_filter {
        let (q1, q3) = (nearest_rank(&sorted, 25.0) as f64, nearest_rank(&sorted, 75.0) as f64);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        sorted.retain(|v| (*v as f64) >= lo && (*v as f64) <= hi);
    }
    Ok(nearest_rank(&sorted, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub percentile: f64,
    pub iqr_filter: bool,
    pub oscillation: OscillationMode,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            percentile: 99.0,
            iqr_filter: false,
            oscillation: OscillationMode::Flicker,
        }
    }
}

/// Decided-frame samples a run contributes to pooled aggregates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSamples {
    pub predicted: Vec<HazardLabel>,
    pub truth: Vec<HazardLabel>,
    pub latencies_ms: Vec<u64>,
    pub tiers: Vec<Tier>,
    pub states: Vec<StateId>,
    pub offload_jobs: u64,
    pub energy_j: f64,
    pub counts: FrameCounts,
}

impl RunSamples {
    /// Decided frames of `output`, aligned with `truth` by frame id.
    pub fn collect(output: &RunOutput, truth: &BTreeMap<u64, HazardLabel>) -> Result<Self> {
        let mut s = RunSamples {
            offload_jobs: output.offload_jobs(),
            energy_j: output.energy.total_j(),
            counts: output.counts,
            ..Default::default()
        };
        for d in output.log.iter().filter_map(LogEntry::as_decision) {
            let t = truth
                .get(&d.frame_id)
                .ok_or_else(|| Error::UndefinedMetrics(format!("no ground truth for frame {}", d.frame_id)))?;
            s.predicted.push(d.label);
            s.truth.push(*t);
            s.latencies_ms.push(d.latency_ms);
            s.tiers.push(d.tier);
            s.states.push(d.fsm_after);
        }
        Ok(s)
    }

    pub fn merge(parts: &[&RunSamples]) -> RunSamples {
        let mut out = RunSamples::default();
        for p in parts {
            out.predicted.extend(&p.predicted);
            out.truth.extend(&p.truth);
            out.latencies_ms.extend(&p.latencies_ms);
            out.tiers.extend(&p.tiers);
            out.states.extend(&p.states);
            out.offload_jobs += p.offload_jobs;
            out.energy_j += p.energy_j;
            out.counts.emitted += p.counts.emitted;
            out.counts.decided += p.counts.decided;
            out.counts.dropped += p.counts.dropped;
            out.counts.rejected += p.counts.rejected;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    #[serde(flatten)]
    pub classification: ClassificationMetrics,
    pub p99_latency_ms: u64,
    pub total_energy_j: f64,
    pub temporal_coverage: f64,
    pub oscillation_count: u64,
    pub tier_histogram: BTreeMap<Tier, u64>,
    /// Decided frames per FSM state after the decision.
    pub state_occupancy: BTreeMap<StateId, u64>,
    pub state_changes: u64,
    pub offload_jobs: u64,
    pub counts: FrameCounts,
}

impl RunMetrics {
    pub fn from_samples(s: &RunSamples, opts: &MetricOptions) -> Result<Self> {
        if !s.counts.conserved() {
            return Err(Error::RecordInvariant(format!(
                "frame conservation violated: {:?}",
                s.counts
            )));
        }
        let classification = classification_metrics(&s.predicted, &s.truth)?;
        let mut tier_histogram: BTreeMap<Tier, u64> = Tier::ALL.into_iter().map(|t| (t, 0)).collect();
        for t in &s.tiers {
            *tier_histogram.entry(*t).or_insert(0) += 1;
        }
        let mut state_occupancy: BTreeMap<StateId, u64> = BTreeMap::new();
        for st in &s.states {
            *state_occupancy.entry(*st).or_insert(0) += 1;
        }
        Ok(Self {
            classification,
            p99_latency_ms: percentile_latency(&s.latencies_ms, opts.percentile, opts.iqr_filter)?,
            total_energy_j: s.energy_j,
            temporal_coverage: s.counts.decided as f64 / s.counts.emitted as f64,
            oscillation_count: oscillation_count(&s.predicted, opts.oscillation),
            tier_histogram,
            state_occupancy,
            state_changes: s.states.windows(2).filter(|w| w[0] != w[1]).count() as u64,
            offload_jobs: s.offload_jobs,
            counts: s.counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use HazardLabel::*;

    #[test]
    fn binarize_merges_watch() {
        assert_eq!(
            binarize(&[NoFlood, SomeWater, Flooded]),
            vec![Binary::NonFlood, Binary::NonFlood, Binary::Flood]
        );
        assert!(binarize(&[]).is_empty());
    }

    #[test]
    fn perfect_predictions() {
        let t = [NoFlood, SomeWater, Flooded, Flooded];
        let m = classification_metrics(&t, &t).unwrap();
        assert_eq!((m.macro_f1, m.balanced_accuracy, m.watch_recall), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_computed_confusion() {
        let m = classification_metrics(
            &[Flooded, Flooded, NoFlood, NoFlood],
            &[Flooded, NoFlood, Flooded, NoFlood],
        )
        .unwrap();
        assert_eq!((m.flood_precision, m.flood_recall, m.macro_f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn all_non_flood_misses_every_flood() {
        let m = classification_metrics(&[NoFlood; 4], &[Flooded, Flooded, NoFlood, NoFlood]).unwrap();
        assert_eq!(m.flood_recall, 0.0);
        assert_eq!(m.flood_precision, 0.0);
    }

    #[test]
    fn empty_is_undefined() {
        assert!(classification_metrics(&[], &[]).is_err());
        assert!(percentile_latency(&[], 99.0, false).is_err());
    }

    #[test]
    fn flicker_definition() {
        let f = OscillationMode::Flicker;
        assert_eq!(oscillation_count(&[NoFlood; 3], f), 0);
        assert_eq!(oscillation_count(&[NoFlood, Flooded, NoFlood], f), 1);
        assert_eq!(oscillation_count(&[NoFlood, Flooded, Flooded, NoFlood], f), 0);
        assert_eq!(
            oscillation_count(&[NoFlood, Flooded, Flooded, NoFlood], OscillationMode::Transitions),
            2
        );
    }

    #[test]
    fn percentiles() {
        assert_eq!(percentile_latency(&[100; 100], 99.0, false).unwrap(), 100);
        let ramp: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile_latency(&ramp, 50.0, false).unwrap(), 50);
        let mut spiky = vec![100u64; 99];
        spiky.push(100_000);
        assert_eq!(percentile_latency(&spiky, 100.0, false).unwrap(), 100_000);
        assert_eq!(percentile_latency(&spiky, 100.0, true).unwrap(), 100);
    }

    fn label() -> impl Strategy<Value = HazardLabel> {
        prop_oneof![Just(NoFlood), Just(SomeWater), Just(Flooded)]
    }

    proptest! {
        #[test]
        fn fractions_in_unit_interval(pairs in prop::collection::vec((label(), label()), 1..60)) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let m = classification_metrics(&p, &t).unwrap();
            for v in [m.macro_f1, m.balanced_accuracy, m.flood_precision, m.flood_recall, m.watch_recall] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn percentile_is_a_member(v in prop::collection::vec(0u64..10_000, 1..80), p in 0.0f64..=100.0) {
            let got = percentile_latency(&v, p, false).unwrap();
            prop_assert!(v.contains(&got));
        }
    }
}
