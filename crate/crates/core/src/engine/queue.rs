//! Multi-producer multi-consumer FIFO used between passes.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

/// Items carry an element count for the scheduler's load estimate.
pub trait Weighted {
    fn elements(&self) -> u64;
}

pub enum Pop<T> {
    Item(T),
    /// Nothing queued right now; more may come.
    Empty,
    /// Closed and drained.
    Closed,
}

pub struct WorkQueue<T> {
    name: &'static str,
    items: Mutex<VecDeque<T>>,
    ready: Condvar,
    closed: AtomicBool,
    /// Gate for queues whose items may not be consumed yet.
    open: AtomicBool,
    len: AtomicUsize,
    elements: AtomicU64,
    enqueued: AtomicU64,
    dequeued: AtomicU64,
    in_flight: AtomicUsize,
}

impl<T: Weighted> WorkQueue<T> {
    pub fn new(name: &'static str) -> WorkQueue<T> {
        WorkQueue::with_gate(name, true)
    }

    /// A queue that accepts items immediately but hands none out until
    /// [`WorkQueue::open`] is called.
    pub fn gated(name: &'static str) -> WorkQueue<T> {
        WorkQueue::with_gate(name, false)
    }

    fn with_gate(name: &'static str, open: bool) -> WorkQueue<T> {
        WorkQueue {
            name,
            items: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            closed: AtomicBool::new(false),
            open: AtomicBool::new(open),
            len: AtomicUsize::new(0),
            elements: AtomicU64::new(0),
            enqueued: AtomicU64::new(0),
            dequeued: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn push(&self, item: T) {
        assert!(!self.is_closed(), "push to closed queue {}", self.name);
        let n = item.elements();
        let mut q = self.items.lock();
        q.push_back(item);
        self.len.store(q.len(), Ordering::Release);
        self.elements.fetch_add(n, Ordering::AcqRel);
        self.enqueued.fetch_add(1, Ordering::AcqRel);
        drop(q);
        self.ready.notify_one();
    }

    pub fn extend(&self, items: impl IntoIterator<Item = T>) {
        let mut q = self.items.lock();
        for item in items {
            self.elements.fetch_add(item.elements(), Ordering::AcqRel);
            self.enqueued.fetch_add(1, Ordering::AcqRel);
            q.push_back(item);
        }
        self.len.store(q.len(), Ordering::Release);
        drop(q);
        self.ready.notify_all();
    }

    /// Non-blocking pop. A returned item counts as in flight until
    /// [`WorkQueue::done`] is called for it.
    pub fn try_pop(&self) -> Pop<T> {
        if !self.is_open() {
            return if self.is_closed() && self.is_empty() { Pop::Closed } else { Pop::Empty };
        }
        let mut q = self.items.lock();
        match q.pop_front() {
            Some(item) => {
                self.in_flight.fetch_add(1, Ordering::AcqRel);
                self.len.store(q.len(), Ordering::Release);
                self.elements.fetch_sub(item.elements(), Ordering::AcqRel);
                self.dequeued.fetch_add(1, Ordering::AcqRel);
                Pop::Item(item)
            }
            None if self.is_closed() => Pop::Closed,
            None => Pop::Empty,
        }
    }

    /// Blocking pop with a timeout, for dedicated consumers.
    pub fn pop_timeout(&self, timeout: Duration) -> Pop<T> {
        match self.try_pop() {
            Pop::Empty => {}
            other => return other,
        }
        let mut q = self.items.lock();
        if q.is_empty() && !self.is_closed() {
            self.ready.wait_for(&mut q, timeout);
        }
        drop(q);
        self.try_pop()
    }

    pub fn done(&self) {
        self.in_flight.fetch_sub(1, Ordering::AcqRel);
        self.ready.notify_all();
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::Release);
        let _g = self.items.lock();
        self.ready.notify_all();
    }

    pub fn open(&self) {
        self.open.store(true, Ordering::Release);
        let _g = self.items.lock();
        self.ready.notify_all();
    }

    pub fn is_open(&self) -> bool {
        self.open.load(Ordering::Acquire)
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    /// Observed without taking the queue lock.
    pub fn len(&self) -> usize {
        self.len.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elements(&self) -> u64 {
        self.elements.load(Ordering::Acquire)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::Acquire)
    }

    /// Nothing queued and nothing being processed.
    pub fn is_idle(&self) -> bool {
        self.is_empty() && self.in_flight() == 0
    }

    /// Blocks until the queue is idle.
    pub fn wait_idle(&self) {
        let mut q = self.items.lock();
        while !(q.is_empty() && self.in_flight() == 0) {
            self.ready.wait_for(&mut q, Duration::from_millis(2));
        }
    }

    pub fn counts(&self) -> QueueCounts {
        QueueCounts {
            name: self.name,
            enqueued: self.enqueued.load(Ordering::Acquire),
            dequeued: self.dequeued.load(Ordering::Acquire),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueCounts {
    pub name: &'static str,
    pub enqueued: u64,
    pub dequeued: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    impl Weighted for u64 {
        fn elements(&self) -> u64 {
            *self
        }
    }

    #[test]
    fn every_item_dequeued_once() {
        let q = Arc::new(WorkQueue::<u64>::new("t"));
        q.extend(1..=1000);
        q.close();
        let seen = Arc::new(Mutex::new(Vec::new()));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let (q, seen) = (q.clone(), seen.clone());
                s.spawn(move || loop {
                    match q.pop_timeout(Duration::from_millis(1)) {
                        Pop::Item(v) => {
                            seen.lock().push(v);
                            q.done();
                        }
                        Pop::Empty => {}
                        Pop::Closed => break,
                    }
                });
            }
        });
        let mut got = seen.lock().clone();
        got.sort_unstable();
        assert_eq!(got, (1..=1000).collect::<Vec<_>>());
        assert_eq!(q.counts().enqueued, q.counts().dequeued);
        assert_eq!(q.len(), 0);
        assert_eq!(q.elements(), 0);
    }

    #[test]
    fn gated_queue_holds_items_until_opened() {
        let q = WorkQueue::<u64>::gated("d");
        q.push(3);
        assert!(matches!(q.try_pop(), Pop::Empty));
        assert_eq!(q.len(), 1);
        q.open();
        assert!(matches!(q.try_pop(), Pop::Item(3)));
        q.done();
        q.close();
        assert!(matches!(q.try_pop(), Pop::Closed));
    }
}
