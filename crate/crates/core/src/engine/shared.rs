//! The image as shared by workers, and the repair barrier.

use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use rustc_hash::FxHashMap;

use crate::cache::BlockCache;
use crate::check::RepairBatch;
use crate::error::Result;
use crate::image::Image;

use super::events::{Event, EventLog};

/// Mailbox entry asking a worker to drop its whole cache.
const CLEAR_ALL: u64 = u64::MAX;

/// Concurrent reads, exclusive writes. Every write happens with the write
/// lock held, which waits for all in-flight readers: that is the barrier.
pub struct SharedImage<'a> {
    image: RwLock<Image>,
    pending: Mutex<Vec<RepairBatch>>,
    /// Blocks each worker must invalidate before its next read.
    mailboxes: Vec<Mutex<Vec<u64>>>,
    /// Block → barrier sequence number that last wrote it.
    written_at: Mutex<FxHashMap<u64, u64>>,
    seq: AtomicU64,
    log: &'a EventLog,
}

impl<'a> SharedImage<'a> {
    pub fn new(image: Image, workers: usize, log: &'a EventLog) -> SharedImage<'a> {
        SharedImage {
            image: RwLock::new(image),
            pending: Mutex::new(Vec::new()),
            mailboxes: (0..workers).map(|_| Mutex::new(Vec::new())).collect(),
            written_at: Mutex::new(FxHashMap::default()),
            seq: AtomicU64::new(0),
            log,
        }
    }

    pub fn into_inner(self) -> Image {
        self.image.into_inner()
    }

    /// Read access. Callers must drop the guard before calling
    /// [`SharedImage::barrier`].
    pub fn read(&self) -> RwLockReadGuard<'_, Image> {
        self.image.read()
    }

    /// Takes a read guard and brings `cache` up to date with every write
    /// made before it.
    pub fn read_synced(&self, worker: usize, cache: &mut BlockCache) -> RwLockReadGuard<'_, Image> {
        let g = self.image.read();
        let mut mb = self.mailboxes[worker].lock();
        for b in mb.drain(..) {
            if b == CLEAR_ALL {
                cache.clear();
            } else {
                cache.invalidate(b);
            }
        }
        g
    }

    /// Barriers completed so far.
    pub fn barriers(&self) -> u64 {
        self.seq.load(Ordering::Acquire)
    }

    /// Whether `block` was written by a barrier after sequence `seen`.
    pub fn written_since(&self, block: u64, seen: u64) -> bool {
        self.written_at.lock().get(&block).is_some_and(|&s| s > seen)
    }

    pub fn submit(&self, batches: Vec<RepairBatch>) {
        if !batches.is_empty() {
            self.pending.lock().extend(batches);
        }
    }

    /// Stops the world and applies every pending repair in canonical
    /// finding order. Returns without stopping anything when nothing is
    /// pending.
    pub fn barrier(&self) -> Result<()> {
        if self.pending.lock().is_empty() {
            return Ok(());
        }
        let mut img = self.image.write();
        let mut batches = std::mem::take(&mut *self.pending.lock());
        if batches.is_empty() {
            // Another worker's barrier got here first.
            return Ok(());
        }
        batches.sort_by_key(|b| b.key);
        let seq = self.seq.load(Ordering::Acquire) + 1;
        let mut touched = Vec::new();
        for b in &batches {
            for p in &b.patches {
                p.apply(&mut img)?;
                touched.push(p.block());
            }
        }
        touched.sort_unstable();
        touched.dedup();
        {
            let mut w = self.written_at.lock();
            for &b in &touched {
                w.insert(b, seq);
            }
        }
        for mb in &self.mailboxes {
            mb.lock().extend_from_slice(&touched);
        }
        self.log.record(Event::Barrier { seq, batches: batches.len() });
        self.seq.store(seq, Ordering::Release);
        Ok(())
    }

    /// Runs a single-threaded phase with exclusive access. If it reports
    /// that it changed the image, that counts as a barrier and every
    /// worker cache is dropped.
    pub fn exclusive<R>(&self, f: impl FnOnce(&mut Image) -> Result<(R, bool)>) -> Result<R> {
        let mut img = self.image.write();
        let (r, changed) = f(&mut img)?;
        if changed {
            let seq = self.seq.load(Ordering::Acquire) + 1;
            for mb in &self.mailboxes {
                mb.lock().push(CLEAR_ALL);
            }
            self.log.record(Event::Barrier { seq, batches: 0 });
            self.seq.store(seq, Ordering::Release);
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{CacheConfig, ScanKind};
    use crate::check::{FindingCode, Patch};

    fn batch(key_inode: u64, block: u64, byte: u8) -> RepairBatch {
        RepairBatch {
            key: (1, FindingCode::BadMode, key_inode, 0, 0),
            patches: vec![Patch::Bytes { block, offset: 0, data: vec![byte] }],
        }
    }

    #[test]
    fn pending_repairs_apply_in_key_order() {
        let log = EventLog::new(false);
        let sh = SharedImage::new(Image::zeroed(4), 2, &log);
        // Both write the same byte; the higher key must land last.
        sh.submit(vec![batch(9, 1, 0xBB)]);
        sh.submit(vec![batch(4, 1, 0xAA)]);
        sh.barrier().unwrap();
        assert_eq!(sh.read().read_block(1).unwrap()[0], 0xBB);
        assert_eq!(sh.barriers(), 1);
        assert!(sh.written_since(1, 0));
        assert!(!sh.written_since(2, 0));
    }

    #[test]
    fn empty_barrier_is_not_counted() {
        let log = EventLog::new(false);
        let sh = SharedImage::new(Image::zeroed(2), 1, &log);
        sh.barrier().unwrap();
        assert_eq!(sh.barriers(), 0);
    }

    #[test]
    fn barrier_invalidates_worker_caches() {
        let log = EventLog::new(false);
        let sh = SharedImage::new(Image::zeroed(4), 2, &log);
        let mut caches = [BlockCache::new(CacheConfig::default()), BlockCache::new(CacheConfig::default())];
        for (w, c) in caches.iter_mut().enumerate() {
            let g = sh.read_synced(w, c);
            assert_eq!(c.cached_read(&g, 2, ScanKind::Random).unwrap()[0], 0);
        }
        sh.submit(vec![batch(1, 2, 7)]);
        sh.barrier().unwrap();
        for (w, c) in caches.iter_mut().enumerate() {
            let g = sh.read_synced(w, c);
            assert_eq!(c.cached_read(&g, 2, ScanKind::Random).unwrap()[0], 7);
        }
    }
}
