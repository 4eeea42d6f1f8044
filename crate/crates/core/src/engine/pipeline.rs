//! Pipelined mode: pass-1 and pass-2 pools run concurrently.
//!
//! Pass-1 workers publish each inode's verdict (kind, claims) in shared
//! tables and queue its directory blocks. Pass-2 workers compute a verdict
//! for a block as soon as every inode it names is decided, but nothing is
//! certified until pass 1 closes and multiply-claimed blocks are settled:
//! verdicts wait in the deferred queue together with blocks whose targets
//! were not ready, and with `..` verification later on.

use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use rustc_hash::FxHashSet;

use crate::bitmap::AtomicBitmap;
use crate::cache::{CacheStats, ScanKind};
use crate::check::serial::{apply_dotdot_decisions, apply_extra_links, geometry_of};
use crate::check::shadow::{kind_code, kind_from_code};
use crate::check::{
    check_dir_block, pass2_verify_dotdot, pass3_connectivity, pass4_refcounts, resolve_extra_links,
    resolve_multi_claims, targets_ready, DirBlockRef, DirBlockVerdict, DotDotDecision, Finding, InodeVerdict, Patch,
    RepairBatch, Report, ShadowState,
};
use crate::config::SchedulerConfig;
use crate::error::{Error, Result};
use crate::format::{Geometry, InodeKind};
use crate::image::Image;
use crate::sched::{
    assign_threads, core_budget, set_idle_priority, FakeUtilization, PassLoad, PoolControl, ProcStatUtilization,
    Role, SchedulerSnapshot, UtilizationProvider,
};

use super::events::{Event, EventLog};
use super::queue::{Pop, Weighted, WorkQueue};
use super::shared::SharedImage;
use super::{
    check_pass5_item, finish_pass5, partition_inodes, pass5_items, EngineOptions, InodeRange, Pass5Item, RunMode,
    RunOutcome, ThreadContext, UtilizationSource,
};

const CLAIM_SHARDS: usize = 64;
const STATUS_PENDING: u8 = 0;
const STATUS_FREE: u8 = 1;

enum Deferred {
    /// Verdict computed early, valid if its block was not written since
    /// barrier `seen`.
    Certify { r: DirBlockRef, verdict: DirBlockVerdict, seen: u64 },
    /// Targets were not all decided when the block was first seen.
    CheckDirBlock(DirBlockRef),
    VerifyDotDot(u64),
}

impl Weighted for Deferred {
    fn elements(&self) -> u64 {
        1
    }
}

/// Wakes workers looking for work.
struct Signal {
    gen: Mutex<u64>,
    cv: Condvar,
}

impl Signal {
    fn notify(&self) {
        *self.gen.lock() += 1;
        self.cv.notify_all();
    }

    fn wait(&self, timeout: Duration) {
        let mut g = self.gen.lock();
        self.cv.wait_for(&mut g, timeout);
    }
}

struct Scheduler {
    cfg: SchedulerConfig,
    threads: u32,
    budget: u32,
    provider: Option<Box<dyn UtilizationProvider>>,
}

struct Pipeline<'a> {
    geo: Geometry,
    mode: RunMode,
    log: &'a EventLog,
    shared: SharedImage<'a>,
    control: PoolControl,
    contexts: Vec<Mutex<ThreadContext>>,
    q1: WorkQueue<InodeRange>,
    q2: WorkQueue<DirBlockRef>,
    deferred: WorkQueue<Deferred>,
    q5: WorkQueue<Pass5Item>,
    status: Vec<AtomicU8>,
    claims: AtomicBitmap,
    dup_shards: Vec<Mutex<Vec<u64>>>,
    state: RwLock<Option<Arc<ShadowState>>>,
    uncertified: Mutex<FxHashSet<DirBlockRef>>,
    decisions: Mutex<Vec<DotDotDecision>>,
    pass1_closed: AtomicBool,
    pass2_closed: AtomicBool,
    shutdown: AtomicBool,
    signal: Signal,
    error: Mutex<Option<Error>>,
    scheduler: Option<Mutex<Scheduler>>,
}

/// Checks `image` with per-pass pools sized by `mode`.
pub fn run_pipeline(image: &mut Image, mode: RunMode, opts: &EngineOptions) -> Result<RunOutcome> {
    let geo = geometry_of(image)?;
    let n = opts.threads.max(2);
    let initial = initial_roles(mode, n, opts.split)?;
    let log = EventLog::new(opts.trace);
    let scheduler = match mode {
        RunMode::Sched | RunMode::RSched => {
            let provider: Option<Box<dyn UtilizationProvider>> = match (mode, &opts.utilization) {
                (RunMode::Sched, _) => None,
                (_, UtilizationSource::System) => Some(Box::new(ProcStatUtilization::new())),
                (_, UtilizationSource::Scripted { total_cores, busy }) => {
                    Some(Box::new(FakeUtilization::new(*total_cores, busy.clone())))
                }
            };
            Some(Mutex::new(Scheduler { cfg: opts.scheduler.clone(), threads: n, budget: n, provider }))
        }
        _ => None,
    };
    let p = Pipeline {
        geo,
        mode,
        log: &log,
        shared: SharedImage::new(std::mem::replace(image, Image::zeroed(0)), n as usize, &log),
        control: PoolControl::new(2, &initial),
        contexts: (0..n as usize).map(|w| Mutex::new(ThreadContext::new(w, geo, opts.cache))).collect(),
        q1: WorkQueue::new("pass1"),
        q2: WorkQueue::new("pass2"),
        deferred: WorkQueue::gated("deferred"),
        q5: WorkQueue::new("pass5"),
        status: (0..geo.total_inodes).map(|_| AtomicU8::new(STATUS_PENDING)).collect(),
        claims: AtomicBitmap::new(geo.total_blocks),
        dup_shards: (0..CLAIM_SHARDS).map(|_| Mutex::new(Vec::new())).collect(),
        state: RwLock::new(None),
        uncertified: Mutex::new(FxHashSet::default()),
        decisions: Mutex::new(Vec::new()),
        pass1_closed: AtomicBool::new(false),
        pass2_closed: AtomicBool::new(false),
        shutdown: AtomicBool::new(false),
        signal: Signal { gen: Mutex::new(0), cv: Condvar::new() },
        error: Mutex::new(None),
        scheduler,
    };
    let result = std::thread::scope(|s| {
        for w in 0..n as usize {
            let p = &p;
            s.spawn(move || p.worker(w));
        }
        let ticker = p.scheduler.as_ref().map(|_| {
            let p = &p;
            s.spawn(move || p.tick_loop())
        });
        let r = p.coordinate(opts);
        p.shutdown.store(true, Ordering::Release);
        p.signal.notify();
        p.control.wake_all();
        if let Some(t) = ticker {
            let _ = t.join();
        }
        r
    });
    let queues = vec![p.q1.counts(), p.q2.counts(), p.deferred.counts(), p.q5.counts()];
    let contexts: Vec<ThreadContext> = p.contexts.into_iter().map(Mutex::into_inner).collect();
    *image = p.shared.into_inner();
    let mut report = result?;
    let mut cache = CacheStats::default();
    for c in &contexts {
        report.findings.extend(c.findings.iter().cloned());
        cache.add(&c.cache.stats());
    }
    report.cache = cache;
    report.canonicalize();
    Ok(RunOutcome { report, events: log.snapshot(), queues })
}

fn initial_roles(mode: RunMode, n: u32, split: Option<(u32, u32)>) -> Result<Vec<Role>> {
    let p1 = match mode {
        RunMode::PipelineSplitEqual => n / 2,
        RunMode::PipelineSplitManual => {
            let (a, b) = split.ok_or_else(|| Error::Config("manual split needs pass-1 and pass-2 thread counts".into()))?;
            if a == 0 || b == 0 || a + b != n {
                return Err(Error::Config(format!("split {a}:{b} must be two positive counts summing to {n}")));
            }
            a
        }
        _ => n,
    };
    Ok((0..n).map(|w| if w < p1 { Role::Pass(0) } else { Role::Pass(1) }).collect())
}

fn findings_changed(f: Vec<Finding>) -> (Vec<Finding>, bool) {
    let changed = !f.is_empty();
    (f, changed)
}

impl Pipeline<'_> {
    fn fail(&self, e: Error) {
        self.error.lock().get_or_insert(e);
        self.signal.notify();
    }

    fn failed(&self) -> bool {
        self.error.lock().is_some()
    }

    fn kind_of(&self, ino: u64) -> Option<InodeKind> {
        if ino < 2 || ino >= self.geo.total_inodes {
            return None;
        }
        kind_from_code(self.status[ino as usize].load(Ordering::Acquire).saturating_sub(1))
    }

    fn published(&self) -> Arc<ShadowState> {
        self.state.read().clone().expect("state is published while deferred work runs")
    }

    // ---- workers ----

    fn worker(&self, w: usize) {
        if self.mode == RunMode::RSched {
            set_idle_priority();
        }
        while !self.shutdown.load(Ordering::Acquire) {
            let role = self.control.begin_item(w);
            let did = match role {
                Role::Pass(0) => self.try_pass1(w),
                Role::Pass(_) => self.try_pass2(w),
                Role::Idle => Ok(false),
            };
            let did = match did {
                Ok(false) if role != Role::Idle => self.try_pass5(w),
                other => other,
            };
            self.control.end_item(w, self.log);
            match did {
                Ok(true) => {}
                Ok(false) if role == Role::Idle => self.control.wait_while_idle(w, Duration::from_millis(5)),
                Ok(false) => self.signal.wait(Duration::from_millis(2)),
                Err(e) => self.fail(e),
            }
        }
    }

    fn try_pass1(&self, w: usize) -> Result<bool> {
        let Pop::Item(range) = self.q1.try_pop() else {
            return Ok(false);
        };
        self.log.record(Event::Dequeue { queue: "pass1", worker: w });
        let r = self.pass1_item(w, range);
        self.q1.done();
        self.signal.notify();
        r.map(|_| true)
    }

    fn pass1_item(&self, w: usize, range: InodeRange) -> Result<()> {
        let mut ctx = self.contexts[w].lock();
        let ctx = &mut *ctx;
        let mut found_dirs = Vec::new();
        let batches = {
            let img = self.shared.read_synced(w, &mut ctx.cache);
            ctx.check_range(&img, range, |shadow, v| {
                self.absorb_inode(shadow, v);
                for &(block, logical) in &v.dir_blocks {
                    found_dirs.push(DirBlockRef { dir: v.inode, block, logical });
                }
            })?
        };
        if !found_dirs.is_empty() {
            self.log.record(Event::Enqueue { queue: "pass2", items: found_dirs.len() as u64 });
            self.q2.extend(found_dirs);
        }
        self.shared.submit(batches);
        self.shared.barrier()
    }

    /// Publishes a pass-1 verdict: claims into the shared table, then the
    /// inode's status, so a decided inode always has its claims visible.
    fn absorb_inode(&self, shadow: &mut ShadowState, v: &InodeVerdict) {
        shadow.stats.objects_checked[0] += 1;
        for &(block, _) in &v.claims {
            shadow.stats.blocks_claimed += 1;
            if self.claims.set(block) {
                self.dup_shards[block as usize % CLAIM_SHARDS].lock().push(block);
            }
        }
        for &(block, logical) in &v.dir_blocks {
            shadow.db_list.push(DirBlockRef { dir: v.inode, block, logical });
        }
        let s = match v.kind {
            Some(k) => kind_code(k) + 1,
            None => STATUS_FREE,
        };
        self.status[v.inode as usize].store(s, Ordering::Release);
    }

    fn try_pass2(&self, w: usize) -> Result<bool> {
        if let Pop::Item(r) = self.q2.try_pop() {
            self.log.record(Event::Dequeue { queue: "pass2", worker: w });
            let res = self.pass2_early(w, r);
            self.q2.done();
            self.signal.notify();
            return res.map(|_| true);
        }
        if let Pop::Item(d) = self.deferred.try_pop() {
            self.log.record(Event::Dequeue { queue: "deferred", worker: w });
            let res = self.run_deferred(w, d);
            self.deferred.done();
            self.signal.notify();
            return res.map(|_| true);
        }
        Ok(false)
    }

    fn pass2_early(&self, w: usize, r: DirBlockRef) -> Result<()> {
        let mut ctx = self.contexts[w].lock();
        let ctx = &mut *ctx;
        let item = {
            let img = self.shared.read_synced(w, &mut ctx.cache);
            let seen = self.shared.barriers();
            let bytes = ctx.cache.cached_read(&img, r.block, ScanKind::Directory)?;
            let total = self.geo.total_inodes;
            if targets_ready(bytes, total, |i| self.status[i as usize].load(Ordering::Acquire) != STATUS_PENDING) {
                let verdict = check_dir_block(r.dir, r.block, bytes, |i| self.kind_of(i));
                Deferred::Certify { r, verdict, seen }
            } else {
                Deferred::CheckDirBlock(r)
            }
        };
        self.deferred.push(item);
        Ok(())
    }

    fn run_deferred(&self, w: usize, d: Deferred) -> Result<()> {
        let state = self.published();
        match d {
            Deferred::VerifyDotDot(dir) => {
                let dec = pass2_verify_dotdot(dir, &state)?;
                self.decisions.lock().push(dec);
                Ok(())
            }
            Deferred::Certify { r, verdict, seen } => {
                if !self.uncertified.lock().remove(&r) {
                    return Ok(());
                }
                let mut ctx = self.contexts[w].lock();
                let v = if self.shared.written_since(r.block, seen) {
                    self.recheck(&mut ctx, &state, r)?
                } else {
                    verdict
                };
                self.certify(&mut ctx, r, v)
            }
            Deferred::CheckDirBlock(r) => {
                if !self.uncertified.lock().remove(&r) {
                    return Ok(());
                }
                let mut ctx = self.contexts[w].lock();
                let v = self.recheck(&mut ctx, &state, r)?;
                self.certify(&mut ctx, r, v)
            }
        }
    }

    fn recheck(&self, ctx: &mut ThreadContext, state: &ShadowState, r: DirBlockRef) -> Result<DirBlockVerdict> {
        let img = self.shared.read_synced(ctx.worker, &mut ctx.cache);
        let bytes = ctx.cache.cached_read(&img, r.block, ScanKind::Directory)?;
        Ok(check_dir_block(r.dir, r.block, bytes, |i| state.kind(i)))
    }

    fn certify(&self, ctx: &mut ThreadContext, r: DirBlockRef, v: DirBlockVerdict) -> Result<()> {
        self.log.record(Event::Certify { dir: r.dir, block: r.block });
        ctx.shadow.absorb_dir_block(&v);
        if let Some(bytes) = v.new_bytes {
            let key = v.findings.iter().map(Finding::key).min().expect("rewrites come with findings");
            self.shared.submit(vec![RepairBatch {
                key,
                patches: vec![Patch::Bytes { block: r.block, offset: 0, data: bytes }],
            }]);
        }
        ctx.findings.extend(v.findings);
        self.shared.barrier()
    }

    fn try_pass5(&self, w: usize) -> Result<bool> {
        let Pop::Item(item) = self.q5.try_pop() else {
            return Ok(false);
        };
        self.log.record(Event::Dequeue { queue: "pass5", worker: w });
        let res = (|| {
            let state = self.published();
            let (f, batches) = {
                let img = self.shared.read();
                check_pass5_item(&state, &img, item)?
            };
            self.contexts[w].lock().findings.extend(f);
            self.shared.submit(batches);
            self.shared.barrier()
        })();
        self.q5.done();
        self.signal.notify();
        res.map(|_| true)
    }

    // ---- scheduler ----

    fn loads(&self, weights: [u64; 2]) -> SchedulerSnapshot {
        let deferred_open = self.deferred.is_open();
        let (dq, de) = if deferred_open { (self.deferred.len() as u64, self.deferred.elements()) } else { (0, 0) };
        SchedulerSnapshot {
            passes: vec![
                PassLoad {
                    queued: self.q1.len() as u64,
                    elements: self.q1.elements(),
                    weight_milli: weights[0],
                    open: !self.pass1_closed.load(Ordering::Acquire),
                },
                PassLoad {
                    queued: self.q2.len() as u64 + dq,
                    elements: self.q2.elements() + de,
                    weight_milli: weights[1],
                    open: !self.pass2_closed.load(Ordering::Acquire),
                },
            ],
        }
    }

    fn tick(&self) {
        let Some(sched) = &self.scheduler else {
            return;
        };
        let mut s = sched.lock();
        let running = self.control.counts()[..2].iter().sum::<u32>();
        let step = s.cfg.budget_step;
        let budget = match s.provider.as_mut() {
            Some(p) => {
                let sample = p.sample(running);
                core_budget(&sample, s.budget, step)
            }
            None => s.threads,
        };
        s.budget = budget;
        let snap = self.loads(s.cfg.weights_milli());
        let targets = assign_threads(&snap, budget.min(s.threads));
        self.log.record(Event::Tick {
            budget,
            targets: targets.clone(),
            queued: snap.passes.iter().map(|p| p.queued).collect(),
            elements: snap.passes.iter().map(|p| p.elements).collect(),
        });
        self.control.rebalance(&targets, self.log);
    }

    fn tick_loop(&self) {
        let period = self.scheduler.as_ref().map(|s| s.lock().cfg.tick()).unwrap_or(Duration::from_millis(10));
        while !self.shutdown.load(Ordering::Acquire) {
            std::thread::sleep(period);
            if self.pass2_closed.load(Ordering::Acquire) {
                // Nothing left to balance; stop ticking.
                break;
            }
            self.tick();
        }
    }

    // ---- coordinator ----

    fn wait_idle<T: Weighted>(&self, q: &WorkQueue<T>) -> Result<()> {
        while !q.is_idle() {
            if self.failed() {
                break;
            }
            self.signal.wait(Duration::from_millis(2));
        }
        match self.error.lock().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn publish(&self, state: ShadowState) {
        *self.state.write() = Some(Arc::new(state));
    }

    fn unpublish(&self) -> ShadowState {
        let arc = self.state.write().take().expect("state was published");
        // Workers drop their handles before marking items done.
        Arc::try_unwrap(arc).unwrap_or_else(|a| (*a).clone())
    }

    fn coordinate(&self, opts: &EngineOptions) -> Result<Report> {
        let started = Instant::now();
        let geo = self.geo;
        let mut report = Report::default();
        let mut findings = Vec::new();

        let t = Instant::now();
        let ranges = partition_inodes(geo.total_inodes, opts.granularity);
        self.log.record(Event::Enqueue { queue: "pass1", items: ranges.len() as u64 });
        self.q1.extend(ranges);
        self.q1.close();
        self.tick();
        self.signal.notify();
        self.wait_idle(&self.q1)?;
        self.pass1_closed.store(true, Ordering::Release);
        self.q2.close();
        self.log.record(Event::Pass1Closed);
        self.tick();

        // Settle claims before anything is certified.
        let mut state = ShadowState::new(geo);
        for c in &self.contexts {
            let part = c.lock().take_shadow();
            state.db_list.extend(part.db_list);
            state.stats.add(&part.stats);
        }
        state.claimed_blocks = self.claims.snapshot();
        for (i, s) in self.status.iter().enumerate() {
            if let Some(k) = kind_from_code(s.load(Ordering::Acquire).saturating_sub(1)) {
                state.mark_kind(i as u64, Some(k));
            }
        }
        for shard in &self.dup_shards {
            for &b in shard.lock().iter() {
                state.multi_claims.entry(b).or_default();
            }
        }
        state.db_list.sort_unstable();
        findings.extend(self.shared.exclusive(|img| {
            let (f, batches) = resolve_multi_claims(&mut state, img)?;
            for b in &batches {
                for p in &b.patches {
                    p.apply(img)?;
                }
            }
            Ok((f, !batches.is_empty()))
        })?);
        state.finalize_db_list();
        self.uncertified.lock().extend(state.db_list.iter().copied());
        report.timings.pass[0] = t.elapsed();

        let t = Instant::now();
        self.publish(state);
        self.deferred.open();
        self.log.record(Event::DeferredOpened);
        self.signal.notify();
        self.wait_idle(&self.q2)?;
        self.wait_idle(&self.deferred)?;
        let mut state = self.unpublish();
        debug_assert!(self.uncertified.lock().is_empty());
        let parts: Vec<ShadowState> = self.contexts.iter().map(|c| c.lock().take_shadow()).collect();
        state.merge_pass2(parts);

        let extra = resolve_extra_links(&mut state);
        findings.extend(self.shared.exclusive(|img| apply_extra_links(img, &extra).map(findings_changed))?);
        let dirs: Vec<u64> = state.directories().collect();
        self.publish(state);
        self.log.record(Event::Enqueue { queue: "deferred", items: dirs.len() as u64 });
        self.deferred.extend(dirs.into_iter().map(Deferred::VerifyDotDot));
        self.signal.notify();
        self.wait_idle(&self.deferred)?;
        self.deferred.close();
        self.pass2_closed.store(true, Ordering::Release);
        let mut state = self.unpublish();
        let decisions = std::mem::take(&mut *self.decisions.lock());
        findings.extend(
            self.shared.exclusive(|img| apply_dotdot_decisions(&mut state, img, decisions).map(findings_changed))?,
        );
        report.timings.pass[1] = t.elapsed();

        let t = Instant::now();
        findings.extend(self.shared.exclusive(|img| pass3_connectivity(&mut state, img).map(findings_changed))?);
        report.timings.pass[2] = t.elapsed();
        let t = Instant::now();
        findings.extend(self.shared.exclusive(|img| pass4_refcounts(&mut state, img).map(findings_changed))?);
        report.timings.pass[3] = t.elapsed();

        let t = Instant::now();
        self.publish(state);
        let items = pass5_items(&geo, opts.pass5_chunk);
        self.log.record(Event::Enqueue { queue: "pass5", items: items.len() as u64 });
        self.q5.extend(items);
        self.q5.close();
        self.signal.notify();
        self.wait_idle(&self.q5)?;
        let mut state = self.unpublish();
        findings.extend(self.shared.exclusive(|img| finish_pass5(&mut state, img))?);
        report.timings.pass[4] = t.elapsed();

        report.findings = findings;
        report.stats = state.stats;
        report.barriers = self.shared.barriers();
        report.timings.total = started.elapsed();
        Ok(report)
    }
}
