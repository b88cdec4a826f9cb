//! Diurnal environmental baselines and the bounded sensor boost.
//!
//! Baselines are per-period EWMAs of temperature, humidity and pressure,
//! learned only from frames labelled No Flood. Anomalies against the current
//! period's baseline drive a small additive rule table whose sum is clamped.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{HazardLabel, SensorReading};
use crate::error::{Error, Result};

const MS_PER_HOUR: f64 = 3_600_000.0;
const MS_PER_DAY: u64 = 86_400_000;

/// Boost contributions are summed in millionths so that rule sums are exact.
const BOOST_SCALE: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiurnalPeriod {
    PreDawn,
    Midday,
    Evening,
    Night,
}

impl DiurnalPeriod {
    pub const ALL: [DiurnalPeriod; 4] = [
        DiurnalPeriod::PreDawn,
        DiurnalPeriod::Midday,
        DiurnalPeriod::Evening,
        DiurnalPeriod::Night,
    ];

    /// Window as [start, end) hours on a 24 h clock; night wraps midnight.
    fn window(self) -> (f64, f64) {
        match self {
            DiurnalPeriod::PreDawn => (3.0, 7.0),
            DiurnalPeriod::Midday => (10.0, 14.0),
            DiurnalPeriod::Evening => (17.0, 21.0),
            DiurnalPeriod::Night => (22.0, 27.0),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DiurnalPeriod::PreDawn => "pre_dawn",
            DiurnalPeriod::Midday => "midday",
            DiurnalPeriod::Evening => "evening",
            DiurnalPeriod::Night => "night",
        }
    }

    /// Period for a virtual timestamp. Times between windows attach to the
    /// nearest window by clock distance; an exact tie goes to the window that
    /// just ended.
    pub fn from_timestamp(timestamp_ms: u64) -> DiurnalPeriod {
        let hour = (timestamp_ms % MS_PER_DAY) as f64 / MS_PER_HOUR;
        let mut best = (f64::INFINITY, DiurnalPeriod::Night);
        for p in DiurnalPeriod::ALL {
            let d = p.clock_distance(hour);
            if d == 0.0 {
                return p;
            }
            let ended_before = p.ends_before(hour);
            if d < best.0 || (d == best.0 && ended_before) {
                best = (d, p);
            }
        }
        best.1
    }

    fn clock_distance(self, hour: f64) -> f64 {
        let (start, end) = self.window();
        [hour, hour + 24.0]
            .into_iter()
            .map(|h| {
                if h >= start && h < end {
                    0.0
                } else {
                    let to_start = (start - h).rem_euclid(24.0);
                    let from_end = (h - end).rem_euclid(24.0);
                    to_start.min(from_end)
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn ends_before(self, hour: f64) -> bool {
        let (_, end) = self.window();
        let from_end = (hour - end).rem_euclid(24.0);
        let to_start = (self.window().0 - hour).rem_euclid(24.0);
        from_end <= to_start
    }
}

impl fmt::Display for DiurnalPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Baseline for one diurnal period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodBaseline {
    pub temperature: f64,
    pub humidity: f64,
    pub pressure: f64,
    pub sample_count: u64,
    pub last_update_ms: u64,
}

impl PeriodBaseline {
    const EMPTY: PeriodBaseline = PeriodBaseline {
        temperature: 0.0,
        humidity: 0.0,
        pressure: 0.0,
        sample_count: 0,
        last_update_ms: 0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalBaselines {
    /// EWMA decay constant in hours.
    pub tau_hours: f64,
    periods: BTreeMap<DiurnalPeriod, PeriodBaseline>,
}

impl Default for DiurnalBaselines {
    fn default() -> Self {
        Self::new(12.0)
    }
}

impl DiurnalBaselines {
    pub fn new(tau_hours: f64) -> Self {
        Self {
            tau_hours,
            periods: DiurnalPeriod::ALL
                .into_iter()
                .map(|p| (p, PeriodBaseline::EMPTY))
                .collect(),
        }
    }

    /// Seeds a period directly, e.g. from a historical store.
    pub fn with_period(mut self, period: DiurnalPeriod, baseline: PeriodBaseline) -> Self {
        self.periods.insert(period, baseline);
        self
    }

    pub fn period(&self, period: DiurnalPeriod) -> &PeriodBaseline {
        self.periods.get(&period).unwrap_or(&PeriodBaseline::EMPTY)
    }

    /// EWMA update from a No Flood frame; identity for any other label.
    pub fn update(&self, reading: &SensorReading, label: HazardLabel, period: DiurnalPeriod) -> Self {
        if label != HazardLabel::NoFlood {
            return self.clone();
        }
        let prev = *self.period(period);
        let next = if prev.sample_count == 0 {
            PeriodBaseline {
                temperature: reading.temperature,
                humidity: reading.relative_humidity,
                pressure: reading.pressure,
                sample_count: 1,
                last_update_ms: reading.timestamp_ms,
            }
        } else {
            let dt_hours = reading.timestamp_ms.saturating_sub(prev.last_update_ms) as f64 / MS_PER_HOUR;
            let alpha = 1.0 - (-dt_hours / self.tau_hours).exp();
            let blend = |old: f64, new: f64| old + alpha * (new - old);
            PeriodBaseline {
                temperature: blend(prev.temperature, reading.temperature),
                humidity: blend(prev.humidity, reading.relative_humidity),
                pressure: blend(prev.pressure, reading.pressure),
                sample_count: prev.sample_count + 1,
                last_update_ms: reading.timestamp_ms.max(prev.last_update_ms),
            }
        };
        let mut out = self.clone();
        out.periods.insert(period, next);
        out
    }

    pub fn anomalies(&self, reading: &SensorReading, period: DiurnalPeriod) -> Anomalies {
        let b = self.period(period);
        if b.sample_count == 0 {
            return Anomalies::default();
        }
        Anomalies {
            delta_t: reading.temperature - b.temperature,
            delta_rh: reading.relative_humidity - b.humidity,
            delta_p: reading.pressure - b.pressure,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reading minus the period baseline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Anomalies {
    pub delta_t: f64,
    pub delta_rh: f64,
    pub delta_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Temperature,
    Humidity,
    Pressure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Above,
    Below,
}

/// One strict comparison against an anomaly component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub anomaly: AnomalyKind,
    pub comparison: Comparison,
    pub threshold: f64,
}

impl Clause {
    fn holds(&self, a: &Anomalies) -> bool {
        let v = match self.anomaly {
            AnomalyKind::Temperature => a.delta_t,
            AnomalyKind::Humidity => a.delta_rh,
            AnomalyKind::Pressure => a.delta_p,
        };
        match self.comparison {
            Comparison::Above => v > self.threshold,
            Comparison::Below => v < self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRule {
    pub name: String,
    /// Conjunction.
    pub when: Vec<Clause>,
    pub boost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRuleTable {
    pub rules: Vec<BoostRule>,
    pub clamp_min: f64,
    pub clamp_max: f64,
}

fn clause(anomaly: AnomalyKind, comparison: Comparison, threshold: f64) -> Clause {
    Clause {
        anomaly,
        comparison,
        threshold,
    }
}

impl Default for BoostRuleTable {
    fn default() -> Self {
        use AnomalyKind::*;
        use Comparison::*;
        let rule = |name: &str, when: Vec<Clause>, boost: f64| BoostRule {
            name: name.to_string(),
            when,
            boost,
        };
        Self {
            rules: vec![
                rule(
                    "humidity_rise_cooling",
                    vec![clause(Humidity, Above, 15.0), clause(Temperature, Below, -1.5)],
                    0.08,
                ),
                rule("temperature_drop", vec![clause(Temperature, Below, -2.5)], 0.04),
                rule("pressure_fall", vec![clause(Pressure, Below, -5.0)], 0.02),
                rule(
                    "hot_very_dry",
                    vec![clause(Humidity, Below, -20.0), clause(Temperature, Above, 3.0)],
                    -0.08,
                ),
            ],
            clamp_min: -0.08,
            clamp_max: 0.28,
        }
    }
}

fn to_micros(v: f64) -> i64 {
    (v * BOOST_SCALE).round() as i64
}

/// Sum of every firing rule, clamped to the table's range.
pub fn sensor_boost(a: &Anomalies, rules: &BoostRuleTable) -> f64 {
    let total: i64 = rules
        .rules
        .iter()
        .filter(|r| r.when.iter().all(|c| c.holds(a)))
        .map(|r| to_micros(r.boost))
        .sum();
    let clamped = total.clamp(to_micros(rules.clamp_min), to_micros(rules.clamp_max));
    clamped as f64 / BOOST_SCALE
}
