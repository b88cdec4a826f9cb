//! Synthetic sensor regimes applied on top of recorded readings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::FrameMessage;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorVariant {
    RealWet,
    Neutral,
    AntiFlood,
}

/// Additive offsets in °C, %RH and hPa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub temperature: f64,
    pub humidity: f64,
    pub pressure: f64,
}

impl SensorVariant {
    pub const ALL: [SensorVariant; 3] = [SensorVariant::RealWet, SensorVariant::Neutral, SensorVariant::AntiFlood];

    pub fn as_str(&self) -> &'static str {
        match self {
            SensorVariant::RealWet => "real_wet",
            SensorVariant::Neutral => "neutral",
            SensorVariant::AntiFlood => "anti_flood",
        }
    }

    pub fn injection(&self) -> Injection {
        let (temperature, humidity, pressure) = match self {
            SensorVariant::RealWet => (-3.5, 18.0, -8.0),
            SensorVariant::Neutral => (0.0, 0.0, 0.0),
            SensorVariant::AntiFlood => (10.0, -33.0, 2.0),
        };
        Injection {
            temperature,
            humidity,
            pressure,
        }
    }

    /// Frames with the injection added to every reading. Humidity is not
    /// clamped here; out-of-range readings are for ingress validation to catch.
    pub fn apply(&self, frames: &[FrameMessage]) -> Vec<FrameMessage> {
        let inj = self.injection();
        frames
            .iter()
            .cloned()
            .map(|mut f| {
                f.sensor.temperature += inj.temperature;
                f.sensor.relative_humidity += inj.humidity;
                f.sensor.pressure += inj.pressure;
                f
            })
            .collect()
    }
}

impl fmt::Display for SensorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        SensorVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "sensor variant",
                value: s.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in SensorVariant::ALL {
            assert_eq!(v.as_str().parse::<SensorVariant>().unwrap(), v);
        }
        assert!("wet".parse::<SensorVariant>().is_err());
    }

    #[test]
    fn neutral_is_identity_offset() {
        let i = SensorVariant::Neutral.injection();
        assert_eq!((i.temperature, i.humidity, i.pressure), (0.0, 0.0, 0.0));
    }
}
