//! Virtual clock and event queue.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

struct Scheduled<E> {
    due: u64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.due, self.seq) == (other.due, other.seq)
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

/// Discrete-event clock. Time is in virtual milliseconds and never moves
/// backwards; events due at the same instant fire in scheduling order.
pub struct VirtualClock<E> {
    now: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<E>>>,
    limit: usize,
}

impl<E> VirtualClock<E> {
    pub fn new(limit: usize) -> Self {
        Self {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            limit,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule_at(&mut self, due: u64, event: E) -> Result<()> {
        debug_assert!(due >= self.now, "event scheduled in the past");
        if self.queue.len() >= self.limit {
            return Err(Error::RunawayScenario(self.limit));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled {
            due: due.max(self.now),
            seq,
            event,
        }));
        Ok(())
    }

    pub fn schedule_in(&mut self, delay: u64, event: E) -> Result<()> {
        self.schedule_at(self.now + delay, event)
    }

    /// Pops the next event and advances the clock to its due time.
    pub fn advance(&mut self) -> Option<(u64, E)> {
        let Reverse(next) = self.queue.pop()?;
        self.now = next.due;
        Some((next.due, next.event))
    }
}
