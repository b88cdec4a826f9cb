//! Motion-aware five-state machine that picks the next state and inference
//! tier for every frame.
//!
//! Hysteresis is implemented with consecutive-frame streak counters. Every
//! state change resets all counters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{MotionCue, Tier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateId {
    /// Normal watch.
    S0,
    /// Uncertainty investigation.
    S1,
    /// Confirmed flood.
    S2,
    /// Ambiguity / conflict resolution.
    S3,
    /// Resource constrained.
    S4,
}

impl StateId {
    pub const ALL: [StateId; 5] = [StateId::S0, StateId::S1, StateId::S2, StateId::S3, StateId::S4];

    pub fn name(&self) -> &'static str {
        match self {
            StateId::S0 => "normal_watch",
            StateId::S1 => "uncertainty_investigation",
            StateId::S2 => "confirmed_flood",
            StateId::S3 => "ambiguity_conflict",
            StateId::S4 => "resource_constrained",
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for StateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StateId::ALL
            .into_iter()
            .find(|st| st.to_string() == s || st.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "fsm state",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceFlag {
    Normal,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FsmState {
    pub current: StateId,
    /// State to recover toward when leaving S4. Never S4.
    pub anchor: StateId,
    pub consecutive_low: u32,
    pub consecutive_mid: u32,
    pub consecutive_high: u32,
    /// Consecutive frames without image/sensor conflict.
    pub consecutive_calm: u32,
}

impl Default for FsmState {
    fn default() -> Self {
        FsmState::entering(StateId::S0, StateId::S0)
    }
}

impl FsmState {
    /// Fresh state with all counters cleared.
    pub fn entering(current: StateId, anchor: StateId) -> Self {
        debug_assert_ne!(anchor, StateId::S4);
        Self {
            current,
            anchor,
            consecutive_low: 0,
            consecutive_mid: 0,
            consecutive_high: 0,
            consecutive_calm: 0,
        }
    }

    /// S4, remembering where to come back to.
    pub fn constrained(&self) -> Self {
        if self.current == StateId::S4 {
            return *self;
        }
        FsmState::entering(StateId::S4, self.current)
    }

    fn observe(&mut self, band: Band, conflict: bool) {
        let (low, mid, high) = match band {
            Band::Low => (self.consecutive_low + 1, 0, 0),
            Band::Mid => (0, self.consecutive_mid + 1, 0),
            Band::High => (0, 0, self.consecutive_high + 1),
        };
        self.consecutive_low = low;
        self.consecutive_mid = mid;
        self.consecutive_high = high;
        self.consecutive_calm = if conflict { 0 } else { self.consecutive_calm + 1 };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsmInputs {
    pub combined_score: f64,
    pub motion: MotionCue,
    pub resource: ResourceFlag,
    pub conflict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsmPolicyParams {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub promote_streak: u32,
    pub demote_streak: u32,
    /// Minimum |sensor boost| that counts as disagreeing with the image band.
    pub conflict_boost: f64,
}

impl Default for FsmPolicyParams {
    fn default() -> Self {
        Self {
            low_threshold: 0.15,
            high_threshold: 0.40,
            promote_streak: 3,
            demote_streak: 5,
            conflict_boost: 0.08,
        }
    }
}

impl FsmPolicyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_threshold > 0.0 && self.low_threshold < self.high_threshold) {
            return Err(Error::InvalidParam(format!(
                "fsm thresholds need 0 < low < high, got {} / {}",
                self.low_threshold, self.high_threshold
            )));
        }
        if self.promote_streak == 0 || self.demote_streak == 0 {
            return Err(Error::InvalidParam("fsm streaks must be >= 1".into()));
        }
        Ok(())
    }

    pub fn band(&self, score: f64) -> Band {
        if score < self.low_threshold {
            Band::Low
        } else if score < self.high_threshold {
            Band::Mid
        } else {
            Band::High
        }
    }

    /// Image evidence and sensor boost point in opposite directions.
    pub fn conflict(&self, image_score: f64, sensor_boost: f64) -> bool {
        match self.band(image_score) {
            Band::High => sensor_boost <= -self.conflict_boost,
            Band::Low => sensor_boost >= self.conflict_boost,
            Band::Mid => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next: FsmState,
    pub tier: Tier,
    pub offload: bool,
}

/// Tier for a state under a motion cue.
///
/// Each state owns a (base, elevated) pair. Stopped and slow motion select
/// the elevated tier, fast motion the base tier. S0 and S4 are nano-only.
pub fn tier_for(state: StateId, motion: MotionCue) -> Tier {
    let (base, elevated) = match state {
        StateId::S0 | StateId::S4 => (Tier::Nano, Tier::Nano),
        StateId::S1 => (Tier::Small, Tier::Medium),
        StateId::S2 => (Tier::Small, Tier::Large),
        StateId::S3 => (Tier::Medium, Tier::Large),
    };
    match motion {
        MotionCue::Stopped | MotionCue::Slow => elevated,
        MotionCue::Fast => base,
    }
}

/// One control-plane step. Pure and total.
pub fn step(state: &FsmState, inputs: &FsmInputs, params: &FsmPolicyParams) -> StepOutcome {
    if inputs.resource == ResourceFlag::Constrained {
        return StepOutcome {
            next: state.constrained(),
            tier: Tier::Nano,
            offload: false,
        };
    }

    let mut s = if state.current == StateId::S4 {
        FsmState::entering(state.anchor, state.anchor)
    } else {
        *state
    };

    let band = params.band(inputs.combined_score);
    s.observe(band, inputs.conflict);

    let target = transition(&s, band, inputs.conflict, params);
    if target != s.current {
        s = FsmState::entering(target, target);
    }

    let tier = tier_for(s.current, inputs.motion);
    StepOutcome {
        next: s,
        tier,
        offload: tier != Tier::Nano,
    }
}

fn transition(s: &FsmState, band: Band, conflict: bool, p: &FsmPolicyParams) -> StateId {
    use StateId::*;
    let promoted = s.consecutive_high >= p.promote_streak;
    match s.current {
        S1 | S2 if conflict => S3,
        S3 => {
            if s.consecutive_calm < p.promote_streak {
                S3
            } else if promoted {
                S2
            } else if band == Band::Low {
                S0
            } else {
                S1
            }
        }
        S0 | S1 if promoted => S2,
        S2 if s.consecutive_low >= p.demote_streak => S0,
        S1 if s.consecutive_low >= p.demote_streak => S0,
        S0 if s.consecutive_mid >= p.promote_streak => S1,
        other => other,
    }
}
