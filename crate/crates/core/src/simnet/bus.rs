//! In-process publish/subscribe bus with retained messages.
//!
//! Deliveries are ordinary clock events, so ordering is fully deterministic:
//! every subscriber receives a publication after the one-way network latency,
//! and publications due at the same instant arrive in publish order.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::Result;

use super::clock::VirtualClock;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topic {
    SensorData,
    InferenceRequest,
    InferenceResponse(String),
    JetsonStatus,
}

impl Topic {
    pub fn name(&self) -> String {
        match self {
            Topic::SensorData => "sensor/data".into(),
            Topic::InferenceRequest => "inference/request".into(),
            Topic::InferenceResponse(job) => format!("inference/response/{job}"),
            Topic::JetsonStatus => "inference/jetson/status".into(),
        }
    }

    /// Only the worker heartbeat is retained.
    pub fn retained(&self) -> bool {
        matches!(self, Topic::JetsonStatus)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// MQTT-style filter match supporting `+` (one level) and a trailing `#`.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

/// Wrapper produced for every delivery.
#[derive(Debug)]
pub struct Delivery<N, P> {
    pub subscriber: N,
    pub topic: Topic,
    pub payload: P,
}

pub struct Bus<N, P> {
    latency_ms: u64,
    subscriptions: Vec<(String, N)>,
    retained: BTreeMap<Topic, P>,
    published: u64,
}

impl<N: Copy + PartialEq, P: Clone> Bus<N, P> {
    pub fn new(latency_ms: u64) -> Self {
        Self {
            latency_ms,
            subscriptions: Vec::new(),
            retained: BTreeMap::new(),
            published: 0,
        }
    }

    pub fn published(&self) -> u64 {
        self.published
    }

    pub fn retained(&self, topic: &Topic) -> Option<&P> {
        self.retained.get(topic)
    }

    /// Schedules delivery to every matching subscriber; returns how many.
    /// With no subscriber a non-retained payload is dropped.
    pub fn publish<E>(
        &mut self,
        topic: Topic,
        payload: P,
        clock: &mut VirtualClock<E>,
        wrap: impl Fn(Delivery<N, P>) -> E,
    ) -> Result<usize> {
        self.published += 1;
        let name = topic.name();
        let targets: Vec<N> = self
            .subscriptions
            .iter()
            .filter(|(f, _)| topic_matches(f, &name))
            .map(|(_, n)| *n)
            .collect();
        for subscriber in &targets {
            clock.schedule_in(
                self.latency_ms,
                wrap(Delivery {
                    subscriber: *subscriber,
                    topic: topic.clone(),
                    payload: payload.clone(),
                }),
            )?;
        }
        if topic.retained() {
            self.retained.insert(topic, payload);
        }
        Ok(targets.len())
    }

    /// Registers a subscription; retained payloads that match are delivered
    /// to the new subscriber immediately.
    pub fn subscribe<E>(
        &mut self,
        subscriber: N,
        filter: &str,
        clock: &mut VirtualClock<E>,
        wrap: impl Fn(Delivery<N, P>) -> E,
    ) -> Result<()> {
        self.subscriptions.push((filter.to_string(), subscriber));
        for (topic, payload) in &self.retained {
            if topic_matches(filter, &topic.name()) {
                clock.schedule_in(
                    0,
                    wrap(Delivery {
                        subscriber,
                        topic: topic.clone(),
                        payload: payload.clone(),
                    }),
                )?;
            }
        }
        Ok(())
    }
}
