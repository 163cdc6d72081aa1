//! Duplicate suppression for received datagrams.

use std::collections::{BTreeSet, VecDeque};

use crate::time::Timestamp;

pub const REPLAY_WINDOW_MS: i64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Duplicate,
}

/// Remembers `(sender, seq)` pairs for a fixed span. Gaps in `seq` are
/// expected and never flagged; entries older than the window are forgotten.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayWindow {
    window_ms: i64,
    seen: BTreeSet<(String, u64)>,
    order: VecDeque<(Timestamp, String, u64)>,
}

impl Default for ReplayWindow {
    fn default() -> Self {
        ReplayWindow::new(REPLAY_WINDOW_MS)
    }
}

impl ReplayWindow {
    pub fn new(window_ms: i64) -> Self {
        ReplayWindow { window_ms, seen: BTreeSet::new(), order: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    fn expire(&mut self, now: Timestamp) {
        while let Some((t, _, _)) = self.order.front() {
            if now - *t < self.window_ms {
                break;
            }
            let (_, s, q) = self.order.pop_front().unwrap();
            self.seen.remove(&(s, q));
        }
    }

    pub fn dedupe(&mut self, sender: &str, seq: u64, now: Timestamp) -> Freshness {
        self.expire(now);
        let key = (sender.to_string(), seq);
        if self.seen.contains(&key) {
            return Freshness::Duplicate;
        }
        self.seen.insert(key);
        self.order.push_back((now, sender.to_string(), seq));
        Freshness::Fresh
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_within_window() {
        let mut w = ReplayWindow::default();
        assert_eq!(w.dedupe("gen", 4, Timestamp(0)), Freshness::Fresh);
        assert_eq!(w.dedupe("gen", 4, Timestamp(29_999)), Freshness::Duplicate);
        assert_eq!(w.dedupe("other", 4, Timestamp(100)), Freshness::Fresh);
    }

    #[test]
    fn gaps_are_fresh() {
        let mut w = ReplayWindow::default();
        assert_eq!(w.dedupe("gen", 1, Timestamp(0)), Freshness::Fresh);
        assert_eq!(w.dedupe("gen", 3, Timestamp(1)), Freshness::Fresh);
        assert_eq!(w.dedupe("gen", 2, Timestamp(2)), Freshness::Fresh);
    }

    #[test]
    fn expiry_makes_replays_fresh() {
        let mut w = ReplayWindow::default();
        w.dedupe("gen", 1, Timestamp(0));
        assert_eq!(w.dedupe("gen", 1, Timestamp(30_000)), Freshness::Fresh);
        assert_eq!(w.len(), 1);
    }
}
