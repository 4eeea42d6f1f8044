//! Worker role assignment for the pipelined pools.

use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::Serialize;

use crate::engine::events::{Event, EventLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Role {
    /// Serving the queue of pass `n` (0-based).
    Pass(u8),
    Idle,
}

#[derive(Clone, Copy, Debug)]
struct WorkerState {
    role: Role,
    pending: Option<Role>,
    busy: bool,
}

impl WorkerState {
    fn effective(&self) -> Role {
        self.pending.unwrap_or(self.role)
    }
}

/// Which pool every worker belongs to. Workers move only between items:
/// a busy worker picked for migration keeps its role until `end_item`.
pub struct PoolControl {
    passes: usize,
    workers: Mutex<Vec<WorkerState>>,
    changed: Condvar,
}

impl PoolControl {
    pub fn new(passes: usize, initial: &[Role]) -> PoolControl {
        let workers = initial.iter().map(|&role| WorkerState { role, pending: None, busy: false }).collect();
        PoolControl { passes, workers: Mutex::new(workers), changed: Condvar::new() }
    }

    pub fn workers(&self) -> usize {
        self.workers.lock().len()
    }

    pub fn role(&self, w: usize) -> Role {
        self.workers.lock()[w].role
    }

    /// Marks `w` busy and returns its role for the coming item.
    pub fn begin_item(&self, w: usize) -> Role {
        let mut ws = self.workers.lock();
        ws[w].busy = true;
        ws[w].role
    }

    /// Marks `w` free and carries out a deferred migration.
    pub fn end_item(&self, w: usize, log: &EventLog) {
        let mut ws = self.workers.lock();
        let s = &mut ws[w];
        s.busy = false;
        if let Some(to) = s.pending.take() {
            let from = s.role;
            s.role = to;
            log.record(Event::Migration { worker: w, from, to });
            self.changed.notify_all();
        }
    }

    /// Parks an idle worker until its role may have changed.
    pub fn wait_while_idle(&self, w: usize, timeout: Duration) {
        let mut ws = self.workers.lock();
        if ws[w].role == Role::Idle {
            self.changed.wait_for(&mut ws, timeout);
        }
    }

    pub fn wake_all(&self) {
        let _g = self.workers.lock();
        self.changed.notify_all();
    }

    /// Workers per role counting pending moves as done: one entry per
    /// pass, then idle.
    pub fn counts(&self) -> Vec<u32> {
        let ws = self.workers.lock();
        let mut c = vec![0u32; self.passes + 1];
        for s in ws.iter() {
            c[self.slot(s.effective())] += 1;
        }
        c
    }

    /// Current (not pending) roles.
    pub fn roles(&self) -> Vec<Role> {
        self.workers.lock().iter().map(|s| s.role).collect()
    }

    fn slot(&self, r: Role) -> usize {
        match r {
            Role::Pass(i) => i as usize,
            Role::Idle => self.passes,
        }
    }

    fn role_of_slot(&self, i: usize) -> Role {
        if i == self.passes {
            Role::Idle
        } else {
            Role::Pass(i as u8)
        }
    }

    /// Moves workers so pass `i` gets `targets[i]` of them and the rest
    /// idle. Donors are idle workers first, then surplus pools; within a
    /// pool free workers go before busy ones, lower ids first. Returns the
    /// number of workers whose role changed or will change.
    pub fn rebalance(&self, targets: &[u32], log: &EventLog) -> usize {
        assert_eq!(targets.len(), self.passes);
        let mut ws = self.workers.lock();
        let n = ws.len() as u32;
        let mut want: Vec<u32> = targets.to_vec();
        let mut assigned = 0u32;
        for t in want.iter_mut() {
            *t = (*t).min(n - assigned);
            assigned += *t;
        }
        want.push(n - assigned);

        let mut count = vec![0u32; self.passes + 1];
        for s in ws.iter() {
            count[self.slot(s.effective())] += 1;
        }
        let mut donors = Vec::new();
        let mut order: Vec<usize> = vec![self.passes];
        order.extend(0..self.passes);
        for slot in order {
            if count[slot] <= want[slot] {
                continue;
            }
            let mut cands: Vec<usize> = (0..ws.len()).filter(|&w| self.slot(ws[w].effective()) == slot).collect();
            cands.sort_by_key(|&w| (ws[w].busy, w));
            donors.extend(cands.into_iter().take((count[slot] - want[slot]) as usize));
        }
        let mut deficits = Vec::new();
        for slot in 0..=self.passes {
            for _ in count[slot]..want[slot].max(count[slot]) {
                deficits.push(self.role_of_slot(slot));
            }
        }
        let moved = donors.len().min(deficits.len());
        for (&w, &to) in donors.iter().zip(&deficits) {
            let s = &mut ws[w];
            if s.busy {
                s.pending = if to == s.role { None } else { Some(to) };
            } else {
                let from = s.role;
                s.role = to;
                s.pending = None;
                log.record(Event::Migration { worker: w, from, to });
            }
        }
        if moved > 0 {
            self.changed.notify_all();
        }
        moved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn migrations(log: &EventLog) -> usize {
        log.snapshot().iter().filter(|e| matches!(e.event, Event::Migration { .. })).count()
    }

    #[test]
    fn equal_target_is_noop() {
        let log = EventLog::new(false);
        let pc = PoolControl::new(2, &[Role::Pass(0), Role::Pass(0), Role::Pass(1)]);
        assert_eq!(pc.rebalance(&[2, 1], &log), 0);
        assert_eq!(pc.rebalance(&[2, 1], &log), 0);
        assert_eq!(migrations(&log), 0);
    }

    #[test]
    fn busy_workers_move_after_their_item() {
        let log = EventLog::new(false);
        let pc = PoolControl::new(2, &[Role::Pass(0); 4]);
        for w in 0..4 {
            pc.begin_item(w);
        }
        assert_eq!(pc.rebalance(&[2, 2], &log), 2);
        assert_eq!(migrations(&log), 0);
        assert_eq!(pc.counts(), vec![2, 2, 0]);
        // Repeating the same target changes nothing.
        assert_eq!(pc.rebalance(&[2, 2], &log), 0);
        for w in 0..4 {
            pc.end_item(w, &log);
        }
        assert_eq!(migrations(&log), 2);
        assert_eq!(pc.roles(), vec![Role::Pass(1), Role::Pass(1), Role::Pass(0), Role::Pass(0)]);
    }

    #[test]
    fn idle_pool_donates_first() {
        let log = EventLog::new(false);
        let pc = PoolControl::new(2, &[Role::Pass(0), Role::Pass(0), Role::Idle]);
        pc.rebalance(&[2, 1], &log);
        assert_eq!(pc.roles(), vec![Role::Pass(0), Role::Pass(0), Role::Pass(1)]);
        pc.rebalance(&[1, 0], &log);
        assert_eq!(pc.counts(), vec![1, 0, 2]);
    }
}
