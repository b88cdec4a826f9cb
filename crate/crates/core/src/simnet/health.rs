//! Worker health tracking and the offload circuit breaker.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthParams {
    pub heartbeat_period_ms: u64,
    pub miss_limit: u32,
}

impl Default for HealthParams {
    fn default() -> Self {
        Self {
            heartbeat_period_ms: 1000,
            miss_limit: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Breaker {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HealthEvent {
    Heartbeat,
    Timeout,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerHealth {
    pub params: HealthParams,
    pub last_heartbeat_at: u64,
    pub consecutive_timeouts: u32,
    /// Heartbeats seen since the breaker last opened.
    pub heartbeats_while_open: u32,
    pub breaker: Breaker,
}

impl WorkerHealth {
    /// Healthy as of `now`; silence after this point opens the breaker.
    pub fn new(params: HealthParams, now: u64) -> Self {
        Self {
            params,
            last_heartbeat_at: now,
            consecutive_timeouts: 0,
            heartbeats_while_open: 0,
            breaker: Breaker::Closed,
        }
    }

    fn stale(&self, now: u64) -> bool {
        now.saturating_sub(self.last_heartbeat_at) > self.params.miss_limit as u64 * self.params.heartbeat_period_ms
    }

    fn recompute(mut self, now: u64) -> Self {
        let open = self.stale(now) || self.consecutive_timeouts >= self.params.miss_limit;
        self.breaker = if open { Breaker::Open } else { Breaker::Closed };
        if !open {
            self.heartbeats_while_open = 0;
        }
        self
    }

    /// Re-evaluates the breaker at `now` without any new evidence.
    pub fn at(self, now: u64) -> Self {
        self.recompute(now)
    }

    pub fn is_open(&self, now: u64) -> bool {
        self.at(now).breaker == Breaker::Open
    }
}

/// Applies one health signal.
///
/// A heartbeat that ends a silence, or `miss_limit` heartbeats while the
/// breaker is open, clears the timeout count so offloading can resume.
pub fn health_update(h: WorkerHealth, event: HealthEvent, now: u64) -> WorkerHealth {
    let mut h = h.recompute(now);
    match event {
        HealthEvent::Heartbeat => {
            let returning = h.stale(now);
            h.last_heartbeat_at = now;
            if h.breaker == Breaker::Open {
                h.heartbeats_while_open += 1;
                if returning || h.heartbeats_while_open >= h.params.miss_limit {
                    h.consecutive_timeouts = 0;
                }
            }
        }
        HealthEvent::Timeout => h.consecutive_timeouts += 1,
        HealthEvent::Response => h.consecutive_timeouts = 0,
    }
    h.recompute(now)
}
