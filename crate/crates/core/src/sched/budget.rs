//! Core budget controller and utilization sources.

use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UtilizationSample {
    pub total_cores: u32,
    /// Cores kept busy by processes other than the checker.
    pub busy_cores: u32,
    pub checker_threads_running: u32,
    pub timestamp: Instant,
}

/// Next core budget. Shrinks at once to the idle core count when the
/// checker oversubscribes, grows by at most `step` per call otherwise.
/// Always within `[1, total_cores]`.
pub fn core_budget(s: &UtilizationSample, current: u32, step: u32) -> u32 {
    let total = s.total_cores.max(1);
    let idle = s.total_cores.saturating_sub(s.busy_cores);
    let running = s.checker_threads_running;
    let next = if idle > running {
        let grown = current.saturating_add((idle - running).min(step)).min(idle);
        grown.max(current)
    } else if running > idle {
        current.min(idle.max(1))
    } else {
        current
    };
    next.clamp(1, total)
}

pub trait UtilizationProvider: Send {
    fn sample(&mut self, checker_threads_running: u32) -> UtilizationSample;
}

/// Replays a script of busy-core counts, one per sample; the last value
/// repeats.
pub struct FakeUtilization {
    total_cores: u32,
    script: Vec<u32>,
    next: usize,
}

impl FakeUtilization {
    pub fn new(total_cores: u32, script: Vec<u32>) -> FakeUtilization {
        assert!(!script.is_empty());
        FakeUtilization { total_cores, script, next: 0 }
    }
}

impl UtilizationProvider for FakeUtilization {
    fn sample(&mut self, checker_threads_running: u32) -> UtilizationSample {
        let busy = self.script[self.next.min(self.script.len() - 1)].min(self.total_cores);
        self.next += 1;
        UtilizationSample { total_cores: self.total_cores, busy_cores: busy, checker_threads_running, timestamp: Instant::now() }
    }
}

/// Reads machine-wide busy time from `/proc/stat` and subtracts this
/// process's own CPU time from `/proc/self/stat`.
pub struct ProcStatUtilization {
    total_cores: u32,
    last: Option<(u64, u64, u64, Instant)>,
    ticks_per_sec: f64,
}

impl ProcStatUtilization {
    pub fn new() -> ProcStatUtilization {
        let total_cores = std::thread::available_parallelism().map(|n| n.get() as u32).unwrap_or(1);
        ProcStatUtilization { total_cores, last: None, ticks_per_sec: clock_ticks() }
    }

    fn read() -> Option<(u64, u64, u64)> {
        let stat = std::fs::read_to_string("/proc/stat").ok()?;
        let line = stat.lines().next()?;
        let f: Vec<u64> = line.split_whitespace().skip(1).filter_map(|x| x.parse().ok()).collect();
        if f.len() < 4 {
            return None;
        }
        let idle = f[3] + f.get(4).copied().unwrap_or(0);
        let all: u64 = f.iter().take(8).sum();
        let own = std::fs::read_to_string("/proc/self/stat").ok()?;
        // Fields after the parenthesized command name; utime and stime
        // are the 12th and 13th of those.
        let rest = &own[own.rfind(')')? + 2..];
        let g: Vec<&str> = rest.split_whitespace().collect();
        let mine = g.get(11)?.parse::<u64>().ok()? + g.get(12)?.parse::<u64>().ok()?;
        Some((all - idle, all, mine))
    }
}

impl Default for ProcStatUtilization {
    fn default() -> Self {
        ProcStatUtilization::new()
    }
}

fn clock_ticks() -> f64 {
    #[cfg(unix)]
    {
        // SAFETY: sysconf has no preconditions.
        let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
        if t > 0 {
            return t as f64;
        }
    }
    100.0
}

impl UtilizationProvider for ProcStatUtilization {
    fn sample(&mut self, checker_threads_running: u32) -> UtilizationSample {
        let now = Instant::now();
        let mut busy_cores = 0;
        if let Some((busy, all, mine)) = ProcStatUtilization::read() {
            if let Some((b0, a0, m0, _)) = self.last {
                let d_all = all.saturating_sub(a0).max(1) as f64;
                let d_busy = busy.saturating_sub(b0) as f64;
                // Machine-wide ticks cover every core; own ticks are per process.
                let busy_frac = d_busy / d_all * self.total_cores as f64;
                let own_cores = mine.saturating_sub(m0) as f64 / self.ticks_per_sec
                    / self.last.map(|l| now.duration_since(l.3).as_secs_f64()).unwrap_or(1.0).max(1e-3);
                busy_cores = (busy_frac - own_cores).round().clamp(0.0, self.total_cores as f64) as u32;
            }
            self.last = Some((busy, all, mine, now));
        }
        UtilizationSample { total_cores: self.total_cores, busy_cores, checker_threads_running, timestamp: now }
    }
}

/// Lowers the calling thread to idle scheduling priority where supported.
/// Returns whether the hint took effect.
pub fn set_idle_priority() -> bool {
    #[cfg(target_os = "linux")]
    {
        let param = libc::sched_param { sched_priority: 0 };
        // SAFETY: pid 0 targets the calling thread; param is a valid pointer.
        unsafe { libc::sched_setscheduler(0, libc::SCHED_IDLE, &param) == 0 }
    }
    #[cfg(not(target_os = "linux"))]
    {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(total: u32, busy: u32, running: u32) -> UtilizationSample {
        UtilizationSample { total_cores: total, busy_cores: busy, checker_threads_running: running, timestamp: Instant::now() }
    }

    #[test]
    fn shrinks_when_oversubscribed() {
        assert_eq!(core_budget(&s(16, 12, 12), 12, 2), 4);
    }

    #[test]
    fn grows_on_idle_machine() {
        assert_eq!(core_budget(&s(16, 0, 4), 4, 2), 6);
        let mut b = 4;
        for _ in 0..20 {
            b = core_budget(&s(16, 0, b), b, 2);
        }
        assert_eq!(b, 16);
    }

    #[test]
    fn floors_at_one() {
        assert_eq!(core_budget(&s(16, 16, 8), 8, 2), 1);
        assert_eq!(core_budget(&s(16, 16, 1), 1, 2), 1);
    }

    #[test]
    fn fake_provider_repeats_last() {
        let mut f = FakeUtilization::new(16, vec![12, 0]);
        assert_eq!(f.sample(1).busy_cores, 12);
        assert_eq!(f.sample(1).busy_cores, 0);
        assert_eq!(f.sample(1).busy_cores, 0);
    }

    #[test]
    fn proc_provider_stays_in_range() {
        let mut p = ProcStatUtilization::new();
        for _ in 0..2 {
            let x = p.sample(1);
            assert!(x.busy_cores <= x.total_cores);
        }
    }
}
