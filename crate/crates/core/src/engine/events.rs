//! Timestamped engine events for ordering assertions and `--debug-trace`.

use std::fmt::Write as _;
use std::time::Instant;

use parking_lot::Mutex;
use serde::Serialize;

use crate::sched::Role;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Event {
    Enqueue { queue: &'static str, items: u64 },
    Dequeue { queue: &'static str, worker: usize },
    Certify { dir: u64, block: u64 },
    Pass1Closed,
    DeferredOpened,
    Tick { budget: u32, targets: Vec<u32>, queued: Vec<u64>, elements: Vec<u64> },
    Migration { worker: usize, from: Role, to: Role },
    Barrier { seq: u64, batches: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TimedEvent {
    pub t_ns: u64,
    pub event: Event,
}

/// Append-only log. Per-item events (enqueue, dequeue, certify) are only
/// kept when `detailed` is set.
pub struct EventLog {
    start: Instant,
    detailed: bool,
    events: Mutex<Vec<TimedEvent>>,
}

impl EventLog {
    pub fn new(detailed: bool) -> EventLog {
        EventLog { start: Instant::now(), detailed, events: Mutex::new(Vec::new()) }
    }

    pub fn is_detailed(&self) -> bool {
        self.detailed
    }

    pub fn record(&self, event: Event) {
        let per_item = matches!(event, Event::Enqueue { .. } | Event::Dequeue { .. } | Event::Certify { .. });
        if per_item && !self.detailed {
            return;
        }
        let mut ev = self.events.lock();
        // Timestamp under the lock so log order and time order agree.
        let t_ns = self.start.elapsed().as_nanos() as u64;
        ev.push(TimedEvent { t_ns, event });
    }

    pub fn snapshot(&self) -> Vec<TimedEvent> {
        self.events.lock().clone()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in self.events.lock().iter() {
            let _ = writeln!(out, "{:>12} {}", e.t_ns, serde_json::to_string(&e.event).expect("event serializes"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_item_events_need_detail() {
        let log = EventLog::new(false);
        log.record(Event::Certify { dir: 2, block: 9 });
        log.record(Event::Pass1Closed);
        let ev = log.snapshot();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].event, Event::Pass1Closed);
        assert!(log.to_text().contains("Pass1Closed"));
    }
}
