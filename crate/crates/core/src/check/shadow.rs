use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap;

use crate::bitmap::Bitmap;
use crate::format::{Geometry, InodeKind};

use super::{CheckStats, InodeVerdict};
use super::pass2::DirBlockVerdict;

/// One pointer naming a block: `slot` 0-9 direct, 10 the indirect block,
/// 11+j indirect entry j.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Claim {
    pub inode: u64,
    pub slot: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirBlockRef {
    pub dir: u64,
    pub block: u64,
    pub logical: u32,
}

/// A dirent at `(block, offset)` inside directory `dir` naming `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirentLoc {
    pub dir: u64,
    pub block: u64,
    pub offset: u32,
    pub target: u64,
}

const KIND_FREE: u8 = 0;

pub(crate) fn kind_code(k: InodeKind) -> u8 {
    match k {
        InodeKind::Directory => 1,
        InodeKind::Regular => 2,
        InodeKind::Symlink => 3,
    }
}

pub(crate) fn kind_from_code(c: u8) -> Option<InodeKind> {
    match c {
        1 => Some(InodeKind::Directory),
        2 => Some(InodeKind::Regular),
        3 => Some(InodeKind::Symlink),
        _ => None,
    }
}

/// What the checker has reconstructed so far.
///
/// `claimed_blocks` holds only blocks named by inodes; metadata blocks below
/// `first_data_block` and reserved inodes 0 and 1 are added when pass 5
/// builds the expected bitmaps, so contexts can be OR-merged directly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShadowState {
    pub geometry: Geometry,
    pub claimed_blocks: Bitmap,
    pub claimed_inodes: Bitmap,
    /// Inode kind per inode number, 0 for free or cleared.
    pub kinds: Vec<u8>,
    /// Blocks claimed more than once, with claimants once pass 1B has run.
    pub multi_claims: BTreeMap<u64, Vec<Claim>>,
    pub icount: Vec<u32>,
    pub db_list: Vec<DirBlockRef>,
    /// Directory → the directory holding the dirent that keeps it linked.
    pub parent_map: BTreeMap<u64, u64>,
    /// Directory → its first `..` record.
    pub dotdot: BTreeMap<u64, DirentLoc>,
    /// Directory → who received the `..` link count contribution.
    pub dotdot_counted: BTreeMap<u64, u64>,
    /// Directory → name dirents naming it, in `(dir, block, offset)` order.
    pub referrers: BTreeMap<u64, Vec<DirentLoc>>,
    pub dir_block_count: FxHashMap<u64, u32>,
    pub dir_blocks_scanned: FxHashMap<u64, u32>,
    pub stats: CheckStats,
}

impl ShadowState {
    pub fn new(geometry: Geometry) -> ShadowState {
        let n = geometry.total_inodes as usize;
        ShadowState {
            geometry,
            claimed_blocks: Bitmap::new(geometry.total_blocks),
            claimed_inodes: Bitmap::new(geometry.total_inodes),
            kinds: vec![KIND_FREE; n],
            multi_claims: BTreeMap::new(),
            icount: vec![0; n],
            db_list: Vec::new(),
            parent_map: BTreeMap::new(),
            dotdot: BTreeMap::new(),
            dotdot_counted: BTreeMap::new(),
            referrers: BTreeMap::new(),
            dir_block_count: FxHashMap::default(),
            dir_blocks_scanned: FxHashMap::default(),
            stats: CheckStats::default(),
        }
    }

    pub fn kind(&self, ino: u64) -> Option<InodeKind> {
        if ino < 2 || ino >= self.geometry.total_inodes {
            return None;
        }
        kind_from_code(self.kinds[ino as usize])
    }

    pub fn is_dir(&self, ino: u64) -> bool {
        self.kind(ino) == Some(InodeKind::Directory)
    }

    pub fn in_use_inodes(&self) -> impl Iterator<Item = u64> + '_ {
        self.kinds.iter().enumerate().filter(|(_, &k)| k != KIND_FREE).map(|(i, _)| i as u64)
    }

    pub fn directories(&self) -> impl Iterator<Item = u64> + '_ {
        self.kinds.iter().enumerate().filter(|(_, &k)| k == 1).map(|(i, _)| i as u64)
    }

    pub fn mark_kind(&mut self, ino: u64, kind: Option<InodeKind>) {
        match kind {
            Some(k) => {
                self.claimed_inodes.set(ino);
                self.kinds[ino as usize] = kind_code(k);
            }
            None => {
                self.claimed_inodes.clear(ino);
                self.kinds[ino as usize] = KIND_FREE;
            }
        }
    }

    /// Folds one pass-1 verdict in. The verdict's patches are the caller's
    /// business.
    pub fn absorb_inode(&mut self, v: &InodeVerdict) {
        self.stats.objects_checked[0] += 1;
        if let Some(k) = v.kind {
            self.mark_kind(v.inode, Some(k));
        }
        for &(block, _) in &v.claims {
            self.stats.blocks_claimed += 1;
            if self.claimed_blocks.set(block) {
                self.multi_claims.entry(block).or_default();
            }
        }
        for &(block, logical) in &v.dir_blocks {
            self.db_list.push(DirBlockRef { dir: v.inode, block, logical });
        }
    }

    /// Sorts `db_list` and counts blocks per directory. Called once pass 1
    /// and multi-claim resolution are done.
    pub fn finalize_db_list(&mut self) {
        self.db_list.sort_unstable();
        self.dir_block_count.clear();
        for r in &self.db_list {
            *self.dir_block_count.entry(r.dir).or_insert(0) += 1;
        }
    }

    /// Folds one pass-2 block verdict in.
    pub fn absorb_dir_block(&mut self, v: &DirBlockVerdict) {
        self.stats.objects_checked[1] += 1;
        for &t in &v.icount_incs {
            self.icount[t as usize] += 1;
        }
        if let Some((offset, target)) = v.dotdot {
            let loc = DirentLoc { dir: v.dir, block: v.block, offset, target };
            self.dotdot
                .entry(v.dir)
                .and_modify(|cur| {
                    if (loc.block, loc.offset) < (cur.block, cur.offset) {
                        *cur = loc;
                    }
                })
                .or_insert(loc);
        }
        for &(offset, target) in &v.subdirs {
            self.referrers.entry(target).or_default().push(DirentLoc { dir: v.dir, block: v.block, offset, target });
        }
        *self.dir_blocks_scanned.entry(v.dir).or_insert(0) += 1;
    }

    pub fn sort_referrers(&mut self) {
        for v in self.referrers.values_mut() {
            v.sort_unstable();
        }
    }

    /// Combines the pass-1 halves of per-worker states. Blocks set in more
    /// than one part join `multi_claims`; claimants are filled by pass 1B.
    pub fn merge_pass1(geometry: Geometry, parts: impl IntoIterator<Item = ShadowState>) -> ShadowState {
        let mut out = ShadowState::new(geometry);
        let mut dups: BTreeSet<u64> = BTreeSet::new();
        for p in parts {
            dups.extend(out.claimed_blocks.union_with_overlap(&p.claimed_blocks));
            dups.extend(p.multi_claims.keys().copied());
            out.claimed_inodes.union_with_overlap(&p.claimed_inodes);
            for (o, k) in out.kinds.iter_mut().zip(&p.kinds) {
                if *k != KIND_FREE {
                    *o = *k;
                }
            }
            out.db_list.extend(p.db_list);
            out.stats.add(&p.stats);
        }
        for b in dups {
            out.multi_claims.entry(b).or_default();
        }
        out.db_list.sort_unstable();
        out
    }

    /// Adds the pass-2 halves of per-worker states into `self`.
    pub fn merge_pass2(&mut self, parts: impl IntoIterator<Item = ShadowState>) {
        for p in parts {
            for (a, b) in self.icount.iter_mut().zip(&p.icount) {
                *a += b;
            }
            for (dir, loc) in p.dotdot {
                self.dotdot
                    .entry(dir)
                    .and_modify(|cur| {
                        if (loc.block, loc.offset) < (cur.block, cur.offset) {
                            *cur = loc;
                        }
                    })
                    .or_insert(loc);
            }
            for (t, locs) in p.referrers {
                self.referrers.entry(t).or_default().extend(locs);
            }
            for (d, n) in p.dir_blocks_scanned {
                *self.dir_blocks_scanned.entry(d).or_insert(0) += n;
            }
            self.stats.add(&p.stats);
        }
        self.sort_referrers();
    }

    /// Pass-2-only view used by workers: same geometry, empty counters.
    pub fn empty_like(&self) -> ShadowState {
        ShadowState::new(self.geometry)
    }
}
