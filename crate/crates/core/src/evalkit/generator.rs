//! Seed-deterministic synthetic sequences with authored ground truth.
//!
//! A frame's scene is at most one water region. Each ensemble member sees
//! it at every tier with tier-dependent recall, confidence and box extent,
//! plus its own clutter and occasional confident hallucinations on dry
//! frames. Hallucinations are model-specific, so they never gain agreement.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BoundingBox, Detection, FrameMessage, HazardLabel, ModelId, MotionCue, SensorReading, Tier};
use crate::error::{Error, Result};
use crate::fusion::{DiurnalBaselines, DiurnalPeriod, PeriodBaseline};

pub const IMAGE_W: f64 = 640.0;
pub const IMAGE_H: f64 = 480.0;
pub const MODELS: u8 = 3;
pub const FRAME_SPACING_MS: u64 = 1000;
/// 12:00 on day zero.
pub const SEQUENCE_START_MS: u64 = 12 * 3_600_000;

/// One line of a sequence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFrame {
    #[serde(flatten)]
    pub frame: FrameMessage,
    pub truth: HazardLabel,
}

/// Scripted role of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceScript {
    pub name: &'static str,
    pub motion: MotionCue,
    /// Runs of (label, frame count).
    pub segments: &'static [(HazardLabel, usize)],
}

use HazardLabel::{Flooded as F, NoFlood as D, SomeWater as W};

pub const SCRIPTS: [SequenceScript; 5] = [
    SequenceScript {
        name: "slow_creeping",
        motion: MotionCue::Slow,
        segments: &[(D, 6), (W, 6), (F, 10), (W, 5), (D, 5)],
    },
    SequenceScript {
        name: "fast_passing",
        motion: MotionCue::Fast,
        segments: &[(D, 8), (W, 4), (F, 8), (W, 4), (D, 8)],
    },
    SequenceScript {
        name: "stopped_water",
        motion: MotionCue::Stopped,
        segments: &[(W, 4), (F, 24), (W, 4)],
    },
    SequenceScript {
        name: "stopped_water_2",
        motion: MotionCue::Slow,
        segments: &[(F, 32)],
    },
    SequenceScript {
        name: "slow_no_water",
        motion: MotionCue::Slow,
        segments: &[(D, 32)],
    },
];

pub fn script(name: &str) -> Result<&'static SequenceScript> {
    SCRIPTS.iter().find(|s| s.name == name).ok_or_else(|| Error::Unknown {
        kind: "sequence",
        value: name.to_string(),
    })
}

#[derive(Debug, Clone, Copy)]
struct TierQuality {
    confidence: f64,
    /// Fraction of the true region area the box covers.
    extent: f64,
    flood_recall: f64,
    puddle_recall: f64,
}

fn quality(tier: Tier) -> TierQuality {
    let q = |confidence, extent, flood_recall, puddle_recall| TierQuality {
        confidence,
        extent,
        flood_recall,
        puddle_recall,
    };
    match tier {
        Tier::Nano => q(0.55, 0.80, 0.93, 0.70),
        Tier::Small => q(0.65, 0.88, 0.95, 0.80),
        Tier::Medium => q(0.72, 0.94, 0.97, 0.90),
        Tier::Large => q(0.80, 1.00, 0.98, 0.95),
    }
}

/// (confidence offset, recall multiplier) per model.
fn skill(model: u8) -> (f64, f64) {
    match model {
        1 => (0.02, 1.0),
        2 => (-0.05, 0.95),
        _ => (0.0, 0.98),
    }
}

const FAST_CONFIDENCE_PENALTY: f64 = 0.05;
const HALLUCINATION_RATE: f64 = 0.3;
const CLUTTER_RATE: f64 = 0.3;

/// Region as (x_min, y_min, x_max, y_max) in pixels.
type Region = [f64; 4];

fn water_region(rng: &mut ChaCha8Rng, label: HazardLabel) -> Option<Region> {
    let area_frac = match label {
        HazardLabel::NoFlood => return None,
        HazardLabel::SomeWater => rng.gen_range(0.05..0.075),
        HazardLabel::Flooded => rng.gen_range(0.40..0.50),
    };
    let width_frac: f64 = match label {
        HazardLabel::Flooded => rng.gen_range(0.75..0.95),
        _ => rng.gen_range(0.25..0.35),
    };
    let w = width_frac * IMAGE_W;
    let h = (area_frac * IMAGE_W * IMAGE_H / w).min(IMAGE_H);
    let x0 = rng.gen_range(0.0..=(IMAGE_W - w));
    // Water sits in the lower part of the frame.
    let y0 = IMAGE_H - h - rng.gen_range(0.0..=((IMAGE_H - h) * 0.3));
    Some([x0, y0, x0 + w, y0 + h])
}

fn clamp_box(r: Region) -> Result<BoundingBox> {
    let x0 = r[0].clamp(0.0, IMAGE_W - 1.0);
    let y0 = r[1].clamp(0.0, IMAGE_H - 1.0);
    BoundingBox::new(x0, y0, r[2].clamp(x0 + 1.0, IMAGE_W), r[3].clamp(y0 + 1.0, IMAGE_H))
}

/// The region shrunk to `extent` of its area about its center, with small
/// per-coordinate jitter.
fn observed(rng: &mut ChaCha8Rng, r: Region, extent: f64) -> Result<BoundingBox> {
    let s = extent.sqrt();
    let (cx, cy) = ((r[0] + r[2]) / 2.0, (r[1] + r[3]) / 2.0);
    let (hw, hh) = ((r[2] - r[0]) * s / 2.0, (r[3] - r[1]) * s / 2.0);
    let mut j = |half: f64| rng.gen_range(-0.02..0.02) * 2.0 * half;
    let b = [cx - hw + j(hw), cy - hh + j(hh), cx + hw + j(hw), cy + hh + j(hh)];
    clamp_box(b)
}

/// A confident false positive whose confidence × area fraction stays in a
/// narrow band: alone it stays below the watch threshold inside a three-model
/// ensemble but crosses the flood threshold for a single model.
fn hallucination(rng: &mut ChaCha8Rng, model: u8) -> Result<Detection> {
    let confidence = rng.gen_range(0.75..0.85);
    let mass = rng.gen_range(0.136..0.142);
    let area = mass / confidence * IMAGE_W * IMAGE_H;
    let w = IMAGE_W * 0.3;
    let h = area / w;
    // Model-specific thirds of the frame, so two models never overlap.
    let x0 = (model - 1) as f64 * IMAGE_W / 3.0 + rng.gen_range(0.0..(IMAGE_W / 3.0 - w).max(1.0));
    let y0 = rng.gen_range(0.0..(IMAGE_H - h));
    Detection::new(BoundingBox::new(x0, y0, x0 + w, y0 + h)?, confidence, ModelId(model))
}

fn clutter(rng: &mut ChaCha8Rng, model: u8) -> Result<Detection> {
    let confidence = rng.gen_range(0.05..0.15);
    let area = rng.gen_range(0.001..0.002) * IMAGE_W * IMAGE_H;
    let w = rng.gen_range(15.0..30.0);
    let h = area / w;
    let x0 = rng.gen_range(0.0..(IMAGE_W - w));
    let y0 = rng.gen_range(0.0..(IMAGE_H - h));
    Detection::new(BoundingBox::new(x0, y0, x0 + w, y0 + h)?, confidence, ModelId(model))
}

fn sequence_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Midday reference readings the synthetic sensor noise is centered on.
pub const MIDDAY: (f64, f64, f64) = (23.5, 55.0, 1013.0);

pub fn generate(script: &SequenceScript, seed: u64) -> Result<Vec<SequenceFrame>> {
    let mut rng = sequence_rng(seed, script.name);
    let labels: Vec<HazardLabel> = script
        .segments
        .iter()
        .flat_map(|(l, n)| std::iter::repeat_n(*l, *n))
        .collect();
    let mut out = Vec::with_capacity(labels.len());
    for (i, truth) in labels.into_iter().enumerate() {
        let timestamp_ms = SEQUENCE_START_MS + i as u64 * FRAME_SPACING_MS;
        let sensor = SensorReading {
            temperature: MIDDAY.0 + rng.gen_range(-0.2..0.2),
            relative_humidity: MIDDAY.1 + rng.gen_range(-1.0..1.0),
            pressure: MIDDAY.2 + rng.gen_range(-0.3..0.3),
            timestamp_ms,
        };
        let region = water_region(&mut rng, truth);
        let hallucinating = if truth == HazardLabel::NoFlood && rng.gen_bool(HALLUCINATION_RATE) {
            Some(rng.gen_range(1..=MODELS))
        } else {
            None
        };
        let fake: BTreeMap<u8, Detection> = hallucinating
            .map(|m| hallucination(&mut rng, m).map(|d| (m, d)))
            .transpose()?
            .into_iter()
            .collect();

        let mut detections_by_tier = BTreeMap::new();
        for tier in Tier::ALL {
            let q = quality(tier);
            let mut dets = Vec::new();
            for model in 1..=MODELS {
                let (conf_offset, recall_mult) = skill(model);
                if let Some(r) = region {
                    let recall = match truth {
                        HazardLabel::Flooded => q.flood_recall,
                        _ => q.puddle_recall,
                    } * recall_mult;
                    if rng.gen_bool(recall) {
                        let mut c = q.confidence + conf_offset + rng.gen_range(-0.05..0.05);
                        if script.motion == MotionCue::Fast {
                            c -= FAST_CONFIDENCE_PENALTY;
                        }
                        let extent = (q.extent + rng.gen_range(-0.03..0.03)).min(1.0);
                        let bbox = observed(&mut rng, r, extent)?;
                        dets.push(Detection::new(bbox, c.clamp(0.0, 1.0), ModelId(model))?);
                    }
                }
                if let Some(d) = fake.get(&model) {
                    dets.push(*d);
                }
                if rng.gen_bool(CLUTTER_RATE) {
                    dets.push(clutter(&mut rng, model)?);
                }
            }
            detections_by_tier.insert(tier, dets);
        }
        out.push(SequenceFrame {
            frame: FrameMessage {
                frame_id: i as u64,
                timestamp_ms,
                motion: script.motion,
                sensor,
                detections_by_tier,
                sequence_id: script.name.to_string(),
            },
            truth,
        });
    }
    Ok(out)
}

pub fn generate_all(seed: u64) -> Result<Vec<(&'static str, Vec<SequenceFrame>)>> {
    SCRIPTS.iter().map(|s| Ok((s.name, generate(s, seed)?))).collect()
}

/// Historical store matching the synthetic climate: midday centered on
/// [`MIDDAY`], other periods plausibly cooler and damper.
pub fn default_baselines() -> DiurnalBaselines {
    let b = |temperature, humidity, pressure, hour: u64| PeriodBaseline {
        temperature,
        humidity,
        pressure,
        sample_count: 500,
        last_update_ms: hour * 3_600_000,
    };
    DiurnalBaselines::new(12.0)
        .with_period(DiurnalPeriod::PreDawn, b(14.0, 85.0, 1013.0, 5))
        .with_period(DiurnalPeriod::Midday, b(MIDDAY.0, MIDDAY.1, MIDDAY.2, 12))
        .with_period(DiurnalPeriod::Evening, b(20.0, 65.0, 1012.0, 18))
        .with_period(DiurnalPeriod::Night, b(16.0, 78.0, 1013.0, 0))
}

pub fn write_sequence(path: &Path, frames: &[SequenceFrame]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for f in frames {
        serde_json::to_writer(&mut buf, f)?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_sequence(path: &Path) -> Result<Vec<SequenceFrame>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let frames: Vec<SequenceFrame> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(frames)
}
