//! Per-worker state and the pass-1 inode scan shared by both modes.

use crate::cache::{BlockCache, CacheConfig, CachedReader, ScanKind};
use crate::check::{check_inode, collect_claimants, Finding, InodeVerdict, RepairBatch, ShadowState};
use crate::error::Result;
use crate::format::{Geometry, BLOCK_SIZE, INODES_PER_BLOCK, INODE_SIZE};
use crate::image::Image;

use super::InodeRange;

/// Everything one worker mutates. Never shared while a pass is running.
pub struct ThreadContext {
    pub worker: usize,
    pub shadow: ShadowState,
    pub findings: Vec<Finding>,
    pub cache: BlockCache,
    verdict: InodeVerdict,
    table: Vec<u8>,
}

impl ThreadContext {
    pub fn new(worker: usize, geo: Geometry, cache: CacheConfig) -> ThreadContext {
        ThreadContext {
            worker,
            shadow: ShadowState::new(geo),
            findings: Vec::new(),
            cache: BlockCache::new(cache),
            verdict: InodeVerdict::default(),
            table: vec![0; BLOCK_SIZE],
        }
    }

    /// Swaps in an empty shadow and returns the old one.
    pub fn take_shadow(&mut self) -> ShadowState {
        let fresh = self.shadow.empty_like();
        std::mem::replace(&mut self.shadow, fresh)
    }

    /// Checks the inodes of `range`. `absorb` sees every verdict after its
    /// findings are collected; repairs come back as batches.
    pub fn check_range(
        &mut self,
        image: &Image,
        range: InodeRange,
        mut absorb: impl FnMut(&mut ShadowState, &InodeVerdict),
    ) -> Result<Vec<RepairBatch>> {
        let geo = self.shadow.geometry;
        let mut batches = Vec::new();
        let end = range.first + range.count;
        let mut ino = range.first;
        while ino < end {
            let (block, _) = geo.inode_location(ino);
            self.table.copy_from_slice(self.cache.cached_read(image, block, ScanKind::InodeTable)?);
            let block_end = ((ino / INODES_PER_BLOCK) + 1) * INODES_PER_BLOCK;
            while ino < end.min(block_end) {
                let (_, off) = geo.inode_location(ino);
                let raw = &self.table[off..off + INODE_SIZE];
                let mut reader = CachedReader { cache: &mut self.cache, image };
                check_inode(&geo, ino, raw, &mut reader, &mut self.verdict)?;
                let v = &mut self.verdict;
                if !v.patches.is_empty() {
                    let key = v.findings.iter().map(Finding::key).min().expect("repairs come with findings");
                    batches.push(RepairBatch { key, patches: std::mem::take(&mut v.patches) });
                }
                absorb(&mut self.shadow, v);
                self.findings.append(&mut v.findings);
                ino += 1;
            }
        }
        Ok(batches)
    }
}

/// Combines finished pass-1 contexts: bitmaps OR-ed, blocks set in more
/// than one context (or twice in one) become multi-claims with every
/// claimant listed, `db_list` sorted, statistics summed.
pub fn merge_contexts(geo: Geometry, contexts: Vec<ShadowState>, image: &Image) -> Result<ShadowState> {
    let mut state = ShadowState::merge_pass1(geo, contexts);
    collect_claimants(&mut state, image)?;
    Ok(state)
}
