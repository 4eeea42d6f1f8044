//! Thread-private LRU block cache with per-stream readahead.
//!
//! Each worker owns one `BlockCache`; nothing in here is shared. The only
//! cross-thread interaction is invalidation after a repair write, which the
//! engine performs while workers are parked at the repair barrier.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub capacity_blocks: usize,
    pub readahead_inode_scan: usize,
    pub readahead_dir_scan: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { capacity_blocks: 4096, readahead_inode_scan: 16, readahead_dir_scan: 8 }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        let ra = self.readahead_inode_scan.max(self.readahead_dir_scan);
        if self.readahead_inode_scan == 0 || self.readahead_dir_scan == 0 || self.capacity_blocks < ra {
            return Err(Error::Config(format!(
                "cache needs capacity >= readahead >= 1, got capacity {} readahead {}/{}",
                self.capacity_blocks, self.readahead_inode_scan, self.readahead_dir_scan
            )));
        }
        Ok(())
    }
}

/// Access pattern hint choosing the readahead depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanKind {
    InodeTable,
    Directory,
    /// Single block, no readahead (indirect pointer blocks).
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub invalidations: u64,
}

impl CacheStats {
    pub fn add(&mut self, o: &CacheStats) {
        self.hits += o.hits;
        self.misses += o.misses;
        self.evictions += o.evictions;
        self.invalidations += o.invalidations;
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

const NIL: u32 = u32::MAX;

struct Slot {
    block: u64,
    data: Box<[u8]>,
    prev: u32,
    next: u32,
}

pub struct BlockCache {
    config: CacheConfig,
    slots: Vec<Slot>,
    index: FxHashMap<u64, u32>,
    free: Vec<u32>,
    // Most recent at head.
    head: u32,
    tail: u32,
    stats: CacheStats,
}

impl BlockCache {
    pub fn new(config: CacheConfig) -> BlockCache {
        BlockCache {
            config,
            slots: Vec::new(),
            index: FxHashMap::default(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
            stats: CacheStats::default(),
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    fn readahead(&self, hint: ScanKind) -> usize {
        match hint {
            ScanKind::InodeTable => self.config.readahead_inode_scan,
            ScanKind::Directory => self.config.readahead_dir_scan,
            ScanKind::Random => 1,
        }
    }

    fn unlink(&mut self, i: u32) {
        let (prev, next) = (self.slots[i as usize].prev, self.slots[i as usize].next);
        if prev != NIL {
            self.slots[prev as usize].next = next;
        } else {
            self.head = next;
        }
        if next != NIL {
            self.slots[next as usize].prev = prev;
        } else {
            self.tail = prev;
        }
    }

    fn push_front(&mut self, i: u32) {
        self.slots[i as usize].prev = NIL;
        self.slots[i as usize].next = self.head;
        if self.head != NIL {
            self.slots[self.head as usize].prev = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    fn insert(&mut self, block: u64, bytes: &[u8]) -> u32 {
        if self.index.len() >= self.config.capacity_blocks.max(1) {
            let victim = self.tail;
            self.unlink(victim);
            let old = self.slots[victim as usize].block;
            self.index.remove(&old);
            self.free.push(victim);
            self.stats.evictions += 1;
        }
        let i = match self.free.pop() {
            Some(i) => {
                let s = &mut self.slots[i as usize];
                s.block = block;
                s.data.copy_from_slice(bytes);
                i
            }
            None => {
                self.slots.push(Slot { block, data: bytes.into(), prev: NIL, next: NIL });
                (self.slots.len() - 1) as u32
            }
        };
        self.index.insert(block, i);
        self.push_front(i);
        i
    }

    /// Returns `block` from the cache, filling the hinted readahead window on
    /// a miss. Readahead fills do not count as misses.
    pub fn cached_read(&mut self, image: &Image, block: u64, hint: ScanKind) -> Result<&[u8]> {
        if let Some(&i) = self.index.get(&block) {
            self.stats.hits += 1;
            self.unlink(i);
            self.push_front(i);
            return Ok(&self.slots[i as usize].data);
        }
        let bytes = image.read_block(block)?;
        self.stats.misses += 1;
        let window = self.readahead(hint).min(self.config.capacity_blocks.max(1));
        let end = (block + window as u64).min(image.total_blocks());
        // Requested block goes in last so it is most recent.
        for b in block + 1..end {
            if !self.index.contains_key(&b) {
                let ahead = image.read_block(b)?;
                self.insert(b, ahead);
            }
        }
        let i = self.insert(block, bytes);
        Ok(&self.slots[i as usize].data)
    }

    pub fn invalidate(&mut self, block: u64) {
        if let Some(i) = self.index.remove(&block) {
            self.unlink(i);
            self.free.push(i);
            self.stats.invalidations += 1;
        }
    }

    pub fn clear(&mut self) {
        let blocks: Vec<u64> = self.index.keys().copied().collect();
        for b in blocks {
            self.invalidate(b);
        }
    }
}

/// Source of block bytes for the pass functions.
pub trait BlockRead {
    fn read(&mut self, block: u64, hint: ScanKind) -> Result<&[u8]>;
}

/// Cache bound to the image it fronts.
pub struct CachedReader<'a> {
    pub cache: &'a mut BlockCache,
    pub image: &'a Image,
}

impl BlockRead for CachedReader<'_> {
    fn read(&mut self, block: u64, hint: ScanKind) -> Result<&[u8]> {
        self.cache.cached_read(self.image, block, hint)
    }
}

/// Uncached access, used by single-shot scans.
pub struct DirectReader<'a>(pub &'a Image);

impl BlockRead for DirectReader<'_> {
    fn read(&mut self, block: u64, _hint: ScanKind) -> Result<&[u8]> {
        self.0.read_block(block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered_image(blocks: u64) -> Image {
        let mut img = Image::zeroed(blocks);
        for b in 0..blocks {
            img.block_mut(b).unwrap()[..8].copy_from_slice(&b.to_le_bytes());
        }
        img
    }

    #[test]
    fn fresh_cache_has_zero_stats() {
        let c = BlockCache::new(CacheConfig::default());
        assert_eq!(c.stats(), CacheStats::default());
    }

    #[test]
    fn first_read_is_one_miss() {
        let img = numbered_image(64);
        let mut c = BlockCache::new(CacheConfig::default());
        let got = c.cached_read(&img, 3, ScanKind::InodeTable).unwrap().to_vec();
        assert_eq!(got, img.read_block(3).unwrap());
        assert_eq!(c.stats(), CacheStats { hits: 0, misses: 1, evictions: 0, invalidations: 0 });
    }

    #[test]
    fn sequential_scan_misses_once_per_window() {
        let img = numbered_image(1100);
        let mut c = BlockCache::new(CacheConfig::default());
        for b in 0..1024 {
            c.cached_read(&img, b, ScanKind::InodeTable).unwrap();
        }
        let s = c.stats();
        assert_eq!(s.misses, 1024 / 16);
        assert_eq!(s.hits, 1024 - 1024 / 16);
        assert_eq!(s.hits + s.misses, 1024);
    }

    #[test]
    fn capacity_one_alternating_never_hits() {
        let img = numbered_image(16);
        let cfg = CacheConfig { capacity_blocks: 1, readahead_inode_scan: 1, readahead_dir_scan: 1 };
        let mut c = BlockCache::new(cfg);
        for _ in 0..10 {
            c.cached_read(&img, 5, ScanKind::InodeTable).unwrap();
            c.cached_read(&img, 6, ScanKind::InodeTable).unwrap();
        }
        assert_eq!(c.stats().hits, 0);
        assert_eq!(c.stats().evictions, 19);
    }

    #[test]
    fn lru_keeps_recently_used() {
        let img = numbered_image(16);
        let cfg = CacheConfig { capacity_blocks: 2, readahead_inode_scan: 1, readahead_dir_scan: 1 };
        let mut c = BlockCache::new(cfg);
        c.cached_read(&img, 1, ScanKind::Random).unwrap();
        c.cached_read(&img, 2, ScanKind::Random).unwrap();
        c.cached_read(&img, 1, ScanKind::Random).unwrap();
        c.cached_read(&img, 3, ScanKind::Random).unwrap(); // evicts 2
        c.cached_read(&img, 1, ScanKind::Random).unwrap();
        assert_eq!(c.stats().hits, 2);
        c.cached_read(&img, 2, ScanKind::Random).unwrap();
        assert_eq!(c.stats().misses, 4);
    }

    #[test]
    fn invalidation_forces_reread() {
        let mut img = numbered_image(8);
        let mut c = BlockCache::new(CacheConfig::default());
        c.cached_read(&img, 2, ScanKind::Directory).unwrap();
        img.block_mut(2).unwrap()[100] = 0xAB;
        c.invalidate(2);
        assert_eq!(c.cached_read(&img, 2, ScanKind::Directory).unwrap()[100], 0xAB);
    }

    #[test]
    fn out_of_range_propagates() {
        let img = numbered_image(8);
        let mut c = BlockCache::new(CacheConfig::default());
        assert!(matches!(c.cached_read(&img, 8, ScanKind::Random), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(CacheConfig::default().validate().is_ok());
        let bad = CacheConfig { capacity_blocks: 4, readahead_inode_scan: 16, readahead_dir_scan: 8 };
        assert!(bad.validate().is_err());
    }
}
