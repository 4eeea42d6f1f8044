//! Data-parallel mode: one pass at a time, each split across workers.

use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::cache::{CacheStats, ScanKind};
use crate::check::serial::{geometry_of, late_pass2};
use crate::check::{
    check_dir_block, pass3_connectivity, pass4_refcounts, resolve_multi_claims, DirBlockRef, Finding, RepairBatch,
    Report, ShadowState,
};
use crate::error::{Error, Result};
use crate::image::Image;

use super::events::{Event, EventLog};
use super::queue::{Pop, Weighted, WorkQueue};
use super::shared::SharedImage;
use super::{check_pass5_item, finish_pass5, partition_inodes, pass5_items, EngineOptions, RunOutcome, ThreadContext};

/// Drains `queue` with one scoped thread per context.
pub(super) fn run_pool<T, F>(contexts: &mut [ThreadContext], queue: &WorkQueue<T>, log: &EventLog, f: F) -> Result<()>
where
    T: Weighted + Send,
    F: Fn(&mut ThreadContext, T) -> Result<()> + Sync,
{
    let error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for ctx in contexts.iter_mut() {
            let (f, error) = (&f, &error);
            s.spawn(move || loop {
                match queue.pop_timeout(Duration::from_millis(5)) {
                    Pop::Item(item) => {
                        log.record(Event::Dequeue { queue: queue.name(), worker: ctx.worker });
                        let r = f(ctx, item);
                        queue.done();
                        if let Err(e) = r {
                            error.lock().get_or_insert(e);
                        }
                    }
                    Pop::Empty => {}
                    Pop::Closed => break,
                }
            });
        }
    });
    match error.into_inner() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn fill<T: Weighted>(queue: &WorkQueue<T>, items: Vec<T>, log: &EventLog) {
    log.record(Event::Enqueue { queue: queue.name(), items: items.len() as u64 });
    queue.extend(items);
    queue.close();
}

fn findings_changed(f: Vec<Finding>) -> (Vec<Finding>, bool) {
    let changed = !f.is_empty();
    (f, changed)
}

/// Checks `image` with `threads` workers per pass.
pub fn run_data_parallel(image: &mut Image, threads: u32, opts: &EngineOptions) -> Result<RunOutcome> {
    let geo = geometry_of(image)?;
    let log = EventLog::new(opts.trace);
    let n = threads.max(1) as usize;
    let shared = SharedImage::new(std::mem::replace(image, Image::zeroed(0)), n, &log);
    let mut contexts: Vec<ThreadContext> = (0..n).map(|w| ThreadContext::new(w, geo, opts.cache)).collect();
    let result = phases(&shared, &mut contexts, &log, opts);
    *image = shared.into_inner();
    let (mut report, queues) = result?;
    for c in &contexts {
        report.findings.extend(c.findings.iter().cloned());
    }
    report.canonicalize();
    Ok(RunOutcome { report, events: log.snapshot(), queues })
}

type Phases = (Report, Vec<super::QueueCounts>);

fn phases(shared: &SharedImage, contexts: &mut [ThreadContext], log: &EventLog, opts: &EngineOptions) -> Result<Phases> {
    let started = Instant::now();
    let geo = contexts[0].shadow.geometry;
    let mut report = Report::default();
    let mut findings = Vec::new();
    let mut queues = Vec::new();

    // Pass 1.
    let t = Instant::now();
    let q1 = WorkQueue::new("pass1");
    fill(&q1, partition_inodes(geo.total_inodes, opts.granularity), log);
    run_pool(contexts, &q1, log, |ctx, range| {
        let batches = {
            let img = shared.read_synced(ctx.worker, &mut ctx.cache);
            ctx.check_range(&img, range, |s, v| s.absorb_inode(v))?
        };
        shared.submit(batches);
        shared.barrier()
    })?;
    queues.push(q1.counts());
    log.record(Event::Pass1Closed);
    let parts: Vec<ShadowState> = contexts.iter_mut().map(ThreadContext::take_shadow).collect();
    let mut state = ShadowState::merge_pass1(geo, parts);
    findings.extend(shared.exclusive(|img| {
        let (f, batches) = resolve_multi_claims(&mut state, img)?;
        for b in &batches {
            for p in &b.patches {
                p.apply(img)?;
            }
        }
        Ok((f, !batches.is_empty()))
    })?);
    state.finalize_db_list();
    report.timings.pass[0] = t.elapsed();

    // Pass 2.
    let t = Instant::now();
    let q2 = WorkQueue::new("pass2");
    fill(&q2, state.db_list.clone(), log);
    let st = &state;
    run_pool(contexts, &q2, log, |ctx, r: DirBlockRef| {
        let v = {
            let img = shared.read_synced(ctx.worker, &mut ctx.cache);
            let bytes = ctx.cache.cached_read(&img, r.block, ScanKind::Directory)?;
            check_dir_block(r.dir, r.block, bytes, |i| st.kind(i))
        };
        log.record(Event::Certify { dir: r.dir, block: r.block });
        ctx.shadow.absorb_dir_block(&v);
        if let Some(bytes) = v.new_bytes {
            let key = v.findings.iter().map(Finding::key).min().expect("rewrites come with findings");
            shared.submit(vec![RepairBatch {
                key,
                patches: vec![crate::check::Patch::Bytes { block: r.block, offset: 0, data: bytes }],
            }]);
        }
        ctx.findings.extend(v.findings);
        shared.barrier()
    })?;
    queues.push(q2.counts());
    let parts: Vec<ShadowState> = contexts.iter_mut().map(ThreadContext::take_shadow).collect();
    state.merge_pass2(parts);
    findings.extend(shared.exclusive(|img| late_pass2(&mut state, img).map(findings_changed))?);
    report.timings.pass[1] = t.elapsed();

    let t = Instant::now();
    findings.extend(shared.exclusive(|img| pass3_connectivity(&mut state, img).map(findings_changed))?);
    report.timings.pass[2] = t.elapsed();
    let t = Instant::now();
    findings.extend(shared.exclusive(|img| pass4_refcounts(&mut state, img).map(findings_changed))?);
    report.timings.pass[3] = t.elapsed();

    // Pass 5.
    let t = Instant::now();
    let q5 = WorkQueue::new("pass5");
    fill(&q5, pass5_items(&geo, opts.pass5_chunk), log);
    let st = &state;
    run_pool(contexts, &q5, log, |ctx, item| {
        let (f, batches) = {
            let img = shared.read();
            check_pass5_item(st, &img, item)?
        };
        ctx.findings.extend(f);
        shared.submit(batches);
        shared.barrier()
    })?;
    queues.push(q5.counts());
    findings.extend(shared.exclusive(|img| finish_pass5(&mut state, img))?);
    report.timings.pass[4] = t.elapsed();

    report.findings = findings;
    report.stats = state.stats;
    let mut cache = CacheStats::default();
    for c in contexts.iter() {
        cache.add(&c.cache.stats());
    }
    report.cache = cache;
    report.barriers = shared.barriers();
    report.timings.total = started.elapsed();
    Ok((report, queues))
}
