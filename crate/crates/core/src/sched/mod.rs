//! Work-proportional thread assignment and core budgeting.
//!
//! Weights are held in milli-units so every computation here is exact
//! integer arithmetic; `outstanding_work` is therefore 1000× the
//! dimensionless total.

mod budget;
mod control;

pub use budget::{core_budget, set_idle_priority, FakeUtilization, ProcStatUtilization, UtilizationProvider, UtilizationSample};
pub use control::{PoolControl, Role};

use serde::Serialize;

/// Load of one pass as seen by the scheduler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PassLoad {
    /// Queued work items.
    pub queued: u64,
    /// Elements across all queued items (inodes, directory blocks).
    pub elements: u64,
    /// Weight in thousandths.
    pub weight_milli: u64,
    /// Whether the pass can still receive or hold work.
    pub open: bool,
}

impl PassLoad {
    /// `q` items of `n` elements each.
    pub fn uniform(q: u64, n: u64, weight_milli: u64) -> PassLoad {
        PassLoad { queued: q, elements: q * n, weight_milli, open: true }
    }

    pub fn work(&self) -> u128 {
        self.elements as u128 * self.weight_milli as u128
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SchedulerSnapshot {
    pub passes: Vec<PassLoad>,
}

/// Σ q·n·w over passes, in milli-units.
pub fn outstanding_work(s: &SchedulerSnapshot) -> u128 {
    s.passes.iter().map(PassLoad::work).sum()
}

/// Splits `c` threads across passes in proportion to outstanding work.
///
/// Shares are rounded by largest remainder, ties to the lower pass index.
/// A pass with work gets at least one thread whenever `c` allows, taken
/// from the pass holding the most (ties: the higher index). With no work at
/// all, everything goes to the first open pass.
pub fn assign_threads(s: &SchedulerSnapshot, c: u32) -> Vec<u32> {
    let n = s.passes.len();
    let mut t = vec![0u32; n];
    if n == 0 {
        return t;
    }
    let total = outstanding_work(s);
    if total == 0 {
        let first = s.passes.iter().position(|p| p.open).unwrap_or(0);
        t[first] = c;
        return t;
    }
    let c128 = c as u128;
    let mut rems = Vec::with_capacity(n);
    let mut given = 0u32;
    for (i, p) in s.passes.iter().enumerate() {
        let num = c128 * p.work();
        t[i] = (num / total) as u32;
        given += t[i];
        rems.push((num % total, i));
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take((c - given) as usize) {
        t[i] += 1;
    }

    let active: Vec<usize> = (0..n).filter(|&i| s.passes[i].elements > 0).collect();
    if c as usize >= active.len() {
        for &i in &active {
            if t[i] == 0 {
                let donor = (0..n).rev().max_by_key(|&j| t[j]).expect("n > 0");
                t[donor] -= 1;
                t[i] = 1;
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(q: [u64; 2], n: [u64; 2], w: [u64; 2]) -> SchedulerSnapshot {
        SchedulerSnapshot {
            passes: vec![PassLoad::uniform(q[0], n[0], w[0] * 1000), PassLoad::uniform(q[1], n[1], w[1] * 1000)],
        }
    }

    #[test]
    fn outstanding_work_examples() {
        assert_eq!(outstanding_work(&snap([0, 0], [64, 1], [1, 4])), 0);
        assert_eq!(outstanding_work(&snap([8, 32], [64, 1], [1, 4])), 640_000);
        assert_eq!(outstanding_work(&snap([16, 64], [64, 1], [1, 4])), 1_280_000);
    }

    #[test]
    fn assign_examples() {
        assert_eq!(assign_threads(&snap([8, 32], [64, 1], [1, 4]), 10), vec![8, 2]);
        assert_eq!(assign_threads(&snap([1, 1], [1, 1], [1, 1]), 3), vec![2, 1]);
        assert_eq!(assign_threads(&snap([5, 0], [64, 1], [1, 4]), 7), vec![7, 0]);
        assert_eq!(assign_threads(&snap([0, 0], [64, 1], [1, 4]), 4), vec![4, 0]);
    }

    #[test]
    fn no_work_goes_to_first_open_pass() {
        let mut s = snap([0, 0], [1, 1], [1, 1]);
        s.passes[0].open = false;
        assert_eq!(assign_threads(&s, 5), vec![0, 5]);
    }

    #[test]
    fn small_pass_keeps_one_thread() {
        // 1000:1 share would round the second pass to zero.
        assert_eq!(assign_threads(&snap([1000, 1], [1, 1], [1, 1]), 4), vec![3, 1]);
        // Not enough threads for both: plain rounding.
        assert_eq!(assign_threads(&snap([1000, 1], [1, 1], [1, 1]), 1), vec![1, 0]);
    }
}
