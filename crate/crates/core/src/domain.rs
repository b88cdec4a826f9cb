//! Shared vocabulary: boxes, detections, tiers, sensor readings and the frame
//! message that is the sole ingress into the processing node.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = Error;
    fn try_from(r: RawBox) -> Result<Self> {
        BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox {
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidBox(format!(
                "coordinates must be finite and non-negative: {coords:?}"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(format!("degenerate extent: {coords:?}")));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union. Zero for disjoint or edge-touching boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Slot of a model within the detector ensemble, 1-based.
///
/// Deserializes from an integer or a decimal string, so it can key JSON maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ModelKey", into = "u8")]
pub struct ModelId(pub u8);

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelKey {
    Int(u8),
    Text(String),
}

impl TryFrom<ModelKey> for ModelId {
    type Error = String;
    fn try_from(k: ModelKey) -> std::result::Result<Self, String> {
        match k {
            ModelKey::Int(v) => Ok(ModelId(v)),
            ModelKey::Text(s) => s.parse().map(ModelId).map_err(|_| format!("invalid model id {s:?}")),
        }
    }
}

impl From<ModelId> for u8 {
    fn from(m: ModelId) -> u8 {
        m.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One box reported by one ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub model_id: ModelId,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64, model_id: ModelId) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidParam(format!("confidence {confidence} outside [0,1]")));
        }
        if model_id.0 == 0 {
            return Err(Error::InvalidParam("model_id is 1-based".into()));
        }
        Ok(Self {
            bbox,
            confidence,
            model_id,
        })
    }
}

/// Merged detection group produced by the consensus aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub summed_confidence: f64,
    pub agreement: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionCue {
    Stopped,
    Slow,
    Fast,
}

impl MotionCue {
    pub const ALL: [MotionCue; 3] = [MotionCue::Stopped, MotionCue::Slow, MotionCue::Fast];

    pub fn as_str(&self) -> &'static str {
        match self {
            MotionCue::Stopped => "stopped",
            MotionCue::Slow => "slow",
            MotionCue::Fast => "fast",
        }
    }
}

impl fmt::Display for MotionCue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionCue {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MotionCue::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "motion cue",
                value: s.to_string(),
            })
    }
}

/// Detector size. Declaration order is the tier order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Nano,
    Small,
    Medium,
    Large,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Nano, Tier::Small, Tier::Medium, Tier::Large];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Nano => "nano",
            Tier::Small => "small",
            Tier::Medium => "medium",
            Tier::Large => "large",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// One step larger, saturating at `Large`.
    pub fn larger(self) -> Tier {
        Tier::ALL[(self.index() + 1).min(3)]
    }

    /// One step smaller, saturating at `Nano`.
    pub fn smaller(self) -> Tier {
        Tier::ALL[self.index().saturating_sub(1)]
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "tier",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    /// Degrees Celsius.
    pub temperature: f64,
    /// Percent.
    pub relative_humidity: f64,
    /// Hectopascal.
    pub pressure: f64,
    /// Virtual time, ms.
    pub timestamp_ms: u64,
}

impl SensorReading {
    /// Plausibility check. Readings outside these bounds are sensor faults.
    pub fn check(&self) -> std::result::Result<(), Rejection> {
        if !(self.relative_humidity.is_finite() && (0.0..=100.0).contains(&self.relative_humidity)) {
            return Err(Rejection::new("relative_humidity", "relative_humidity out of range"));
        }
        if !(self.pressure.is_finite() && self.pressure > 800.0 && self.pressure < 1100.0) {
            return Err(Rejection::new("pressure", "pressure out of range"));
        }
        if !(self.temperature.is_finite() && self.temperature > -60.0 && self.temperature < 70.0) {
            return Err(Rejection::new("temperature", "temperature out of range"));
        }
        Ok(())
    }
}

/// The single message type published on `sensor/data`.
///
/// `detections_by_tier` stands in for image pixels: for every tier it carries
/// what each ensemble member would report at that tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub motion: MotionCue,
    pub sensor: SensorReading,
    pub detections_by_tier: BTreeMap<Tier, Vec<Detection>>,
    pub sequence_id: String,
}

impl FrameMessage {
    /// Detections at `tier` from models `1..=ensemble_size`.
    pub fn detections(&self, tier: Tier, ensemble_size: u8) -> Vec<Detection> {
        self.detections_by_tier
            .get(&tier)
            .map(|d| d.iter().filter(|d| d.model_id.0 <= ensemble_size).copied().collect())
            .unwrap_or_default()
    }
}

/// Three-class hazard output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum HazardLabel {
    NoFlood = 0,
    SomeWater = 1,
    Flooded = 2,
}

impl From<HazardLabel> for u8 {
    fn from(l: HazardLabel) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for HazardLabel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(HazardLabel::NoFlood),
            1 => Ok(HazardLabel::SomeWater),
            2 => Ok(HazardLabel::Flooded),
            _ => Err(Error::Unknown {
                kind: "hazard label",
                value: v.to_string(),
            }),
        }
    }
}

/// Classification thresholds over the combined score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreThresholds {
    pub watch: f64,
    pub flood: f64,
}

impl Default for ScoreThresholds {
    fn default() -> Self {
        Self {
            watch: 0.15,
            flood: 0.40,
        }
    }
}

impl HazardLabel {
    pub fn from_score(combined: f64, t: &ScoreThresholds) -> HazardLabel {
        if combined < t.watch {
            HazardLabel::NoFlood
        } else if combined < t.flood {
            HazardLabel::SomeWater
        } else {
            HazardLabel::Flooded
        }
    }
}

/// Why a frame was refused at ingress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub field: String,
    pub reason: String,
}

impl Rejection {
    pub fn new(field: &str, reason: &str) -> Self {
        Self {
            field: field.to_string(),
            reason: reason.to_string(),
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.reason)
    }
}

/// Checks a frame against every field invariant. `previous_frame_id` is the
/// last accepted id of the same sequence; `required_tiers` are the tiers the
/// active configuration may select.
pub fn validate_frame(
    msg: FrameMessage,
    previous_frame_id: Option<u64>,
    required_tiers: &[Tier],
) -> std::result::Result<FrameMessage, Rejection> {
    if let Some(prev) = previous_frame_id {
        if msg.frame_id <= prev {
            return Err(Rejection::new("frame_id", "frame_id regression"));
        }
    }
    if msg.sequence_id.is_empty() {
        return Err(Rejection::new("sequence_id", "sequence_id empty"));
    }
    msg.sensor.check()?;
    for tier in required_tiers {
        if !msg.detections_by_tier.contains_key(tier) {
            return Err(Rejection::new(
                "detections_by_tier",
                &format!("detections_by_tier missing tier {tier}"),
            ));
        }
    }
    for det in msg.detections_by_tier.values().flatten() {
        if !(0.0..=1.0).contains(&det.confidence) {
            return Err(Rejection::new("confidence", "confidence out of range"));
        }
        if det.model_id.0 == 0 {
            return Err(Rejection::new("model_id", "model_id out of range"));
        }
    }
    Ok(msg)
}
