//! Virtual datagram network: loss, latency and reordering, never corruption.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::rng::{seeded, SeededRng};
use crate::time::Timestamp;

use super::scenario::FaultPlan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub at: Timestamp,
    pub to: usize,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub lost: u64,
    pub held: u64,
    pub delivered: u64,
}

/// Delivery time, send order (tie-break), destination index, datagram.
type InFlight = Reverse<(Timestamp, u64, usize, Vec<u8>)>;

pub struct VirtualNetwork {
    plan: FaultPlan,
    rng: SeededRng,
    queue: BinaryHeap<InFlight>,
    counter: u64,
    pub stats: NetStats,
}

impl VirtualNetwork {
    pub fn new(plan: FaultPlan, seed: u64) -> Self {
        VirtualNetwork { plan, rng: seeded(seed), queue: BinaryHeap::new(), counter: 0, stats: NetStats::default() }
    }

    pub fn send(&mut self, now: Timestamp, to: usize, bytes: Vec<u8>) {
        self.stats.sent += 1;
        if self.plan.loss_pct > 0.0 && self.rng.random::<f64>() * 100.0 < self.plan.loss_pct {
            self.stats.lost += 1;
            return;
        }
        let (lo, hi) = self.plan.latency_ms;
        let mut delay = self.rng.random_range(lo..=hi);
        if self.plan.reorder_ms > 0 && self.rng.random::<f64>() * 100.0 < self.plan.reorder_pct {
            self.stats.held += 1;
            delay += self.rng.random_range(0..=self.plan.reorder_ms);
        }
        self.counter += 1;
        self.queue.push(Reverse((now + delay, self.counter, to, bytes)));
    }

    /// Next datagram arriving at or before `t`, in arrival order.
    pub fn pop_due(&mut self, t: Timestamp) -> Option<Delivery> {
        if self.queue.peek().is_some_and(|Reverse((at, ..))| *at <= t) {
            let Reverse((at, _, to, bytes)) = self.queue.pop()?;
            self.stats.delivered += 1;
            return Some(Delivery { at, to, bytes });
        }
        None
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}
