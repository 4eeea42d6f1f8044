//! Parallel execution of the checker.
//!
//! Two shapes:
//!
//! - data-parallel: each pass is split into work items drawn by a pool of
//!   workers with private contexts, merged before the next pass.
//! - pipelined: pass 1 and pass 2 run at once with their own pools. Pass-1
//!   workers queue directory blocks as they find them; pass-2 verdicts are
//!   certified only after pass 1 has closed. Pool sizes are fixed or chosen
//!   by the scheduler.
//!
//! Passes 3 and 4 run single-threaded after pass 2 in every mode, pass 5
//! is split by bitmap range. Every mode produces the serial report and the
//! serial repaired image.

pub mod context;
mod datapara;
pub mod events;
mod pipeline;
pub mod queue;
pub mod shared;

use std::fmt;
use std::str::FromStr;

use crate::cache::CacheConfig;
use crate::check::{
    pass5_block_range, pass5_free_counts, pass5_inode_range, run_serial, CheckOptions, DirBlockRef, Finding,
    RepairBatch, Report, ShadowState,
};
use crate::config::{Config, SchedulerConfig};
use crate::error::{Error, Result};
use crate::format::Geometry;
use crate::image::Image;

pub use context::{merge_contexts, ThreadContext};
pub use datapara::run_data_parallel;
pub use events::{Event, EventLog, TimedEvent};
pub use pipeline::run_pipeline;
pub use queue::{Pop, QueueCounts, Weighted, WorkQueue};
pub use shared::SharedImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RunMode {
    Serial,
    DataParallel,
    PipelineSplitEqual,
    PipelineSplitManual,
    Sched,
    RSched,
}

impl RunMode {
    pub const ALL: [RunMode; 6] = [
        RunMode::Serial,
        RunMode::DataParallel,
        RunMode::PipelineSplitEqual,
        RunMode::PipelineSplitManual,
        RunMode::Sched,
        RunMode::RSched,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Serial => "serial",
            RunMode::DataParallel => "datapara",
            RunMode::PipelineSplitEqual => "pipeline-split-equal",
            RunMode::PipelineSplitManual => "pipeline-split-manual",
            RunMode::Sched => "sched",
            RunMode::RSched => "rsched",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<RunMode> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Where the resource-aware mode gets utilization samples from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum UtilizationSource {
    #[default]
    System,
    /// Scripted busy-core counts on a machine of `total_cores`.
    Scripted { total_cores: u32, busy: Vec<u32> },
}

#[derive(Clone, Debug)]
pub struct EngineOptions {
    pub threads: u32,
    /// Pass-1 and pass-2 pool sizes for the manual split.
    pub split: Option<(u32, u32)>,
    pub granularity: u32,
    pub cache: CacheConfig,
    pub scheduler: SchedulerConfig,
    pub utilization: UtilizationSource,
    /// Keep per-item events in the log.
    pub trace: bool,
    /// Bits per pass-5 work item.
    pub pass5_chunk: u64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions::from_config(&Config::default(), 1)
    }
}

impl EngineOptions {
    pub fn from_config(c: &Config, threads: u32) -> EngineOptions {
        EngineOptions {
            threads,
            split: None,
            granularity: c.engine.granularity,
            cache: c.cache,
            scheduler: c.scheduler.clone(),
            utilization: UtilizationSource::System,
            trace: false,
            pass5_chunk: crate::format::BITS_PER_BLOCK,
        }
    }
}

/// Report plus what the engine observed while producing it.
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub report: Report,
    pub events: Vec<TimedEvent>,
    pub queues: Vec<QueueCounts>,
}

/// An inode-number range checked as one pass-1 item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InodeRange {
    pub first: u64,
    pub count: u64,
}

impl Weighted for InodeRange {
    fn elements(&self) -> u64 {
        self.count
    }
}

/// Splits `[2, total_inodes)` into ascending ranges of `granularity`
/// inodes, the last possibly shorter.
pub fn partition_inodes(total_inodes: u64, granularity: u32) -> Vec<InodeRange> {
    let g = granularity.max(1) as u64;
    let mut out = Vec::new();
    let mut first = 2;
    while first < total_inodes {
        let count = g.min(total_inodes - first);
        out.push(InodeRange { first, count });
        first += count;
    }
    out
}

impl Weighted for DirBlockRef {
    fn elements(&self) -> u64 {
        1
    }
}

/// A slice of one bitmap compared in pass 5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass5Item {
    Blocks { start: u64, end: u64 },
    Inodes { start: u64, end: u64 },
}

impl Weighted for Pass5Item {
    fn elements(&self) -> u64 {
        match *self {
            Pass5Item::Blocks { start, end } | Pass5Item::Inodes { start, end } => end - start,
        }
    }
}

pub(crate) fn pass5_items(geo: &Geometry, chunk: u64) -> Vec<Pass5Item> {
    let chunk = chunk.max(1);
    let mut out = Vec::new();
    let mut s = 0;
    while s < geo.total_blocks {
        let e = (s + chunk).min(geo.total_blocks);
        out.push(Pass5Item::Blocks { start: s, end: e });
        s = e;
    }
    s = 0;
    while s < geo.total_inodes {
        let e = (s + chunk).min(geo.total_inodes);
        out.push(Pass5Item::Inodes { start: s, end: e });
        s = e;
    }
    out
}

/// Compares one pass-5 slice; repairs come back one batch per finding.
pub(crate) fn check_pass5_item(state: &ShadowState, image: &Image, item: Pass5Item) -> Result<(Vec<Finding>, Vec<RepairBatch>)> {
    let pairs = match item {
        Pass5Item::Blocks { start, end } => pass5_block_range(state, image, start, end)?,
        Pass5Item::Inodes { start, end } => pass5_inode_range(state, image, start, end)?,
    };
    let mut findings = Vec::with_capacity(pairs.len());
    let mut batches = Vec::with_capacity(pairs.len());
    for (f, p) in pairs {
        batches.push(RepairBatch { key: f.key(), patches: vec![p] });
        findings.push(f);
    }
    Ok((findings, batches))
}

/// Free counts after the bitmaps, run with exclusive access.
pub(crate) fn finish_pass5(state: &mut ShadowState, image: &mut Image) -> Result<(Vec<Finding>, bool)> {
    let geo = state.geometry;
    state.stats.objects_checked[4] += geo.total_blocks + geo.total_inodes;
    match pass5_free_counts(state, image)? {
        Some((f, sb)) => {
            image.write_superblock(&sb)?;
            Ok((f, true))
        }
        None => Ok((Vec::new(), false)),
    }
}

/// Runs the checker on `image` in `mode`, repairing in place.
pub fn run_mode(image: &mut Image, mode: RunMode, opts: &EngineOptions) -> Result<RunOutcome> {
    if opts.threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    match mode {
        RunMode::Serial => {
            let report = run_serial(image, &CheckOptions { cache: opts.cache })?;
            Ok(RunOutcome { report, ..RunOutcome::default() })
        }
        RunMode::DataParallel => run_data_parallel(image, opts.threads, opts),
        _ if opts.threads == 1 => run_data_parallel(image, 1, opts),
        _ => run_pipeline(image, mode, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_examples() {
        assert_eq!(
            partition_inodes(1026, 512),
            vec![InodeRange { first: 2, count: 512 }, InodeRange { first: 514, count: 512 }]
        );
        assert_eq!(partition_inodes(3, 2048), vec![InodeRange { first: 2, count: 1 }]);
    }

    #[test]
    fn partition_covers_exactly() {
        for total in [3u64, 4, 100, 2049, 5000] {
            for g in [1u32, 7, 64, 2048] {
                let r = partition_inodes(total, g);
                let mut next = 2;
                for x in &r {
                    assert_eq!(x.first, next);
                    assert!(x.count > 0 && x.count <= g as u64);
                    next += x.count;
                }
                assert_eq!(next, total);
                assert!(r[..r.len() - 1].iter().all(|x| x.count == g as u64));
            }
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in RunMode::ALL {
            assert_eq!(m.as_str().parse::<RunMode>().unwrap(), m);
        }
        assert!("fast".parse::<RunMode>().is_err());
    }
}
