//! Inode checks and block claiming.

use std::collections::BTreeMap;

use crate::cache::{BlockRead, ScanKind};
use crate::error::Result;
use crate::format::{
    inode_checksums, pointer_at, Geometry, Inode, InodeKind, BLOCK_SIZE, DIRECT_POINTERS, INDIRECT_SLOT,
    INODE_SIZE, POINTERS_PER_BLOCK,
};
use crate::image::Image;

use super::shadow::{Claim, DirBlockRef, ShadowState};
use super::{Finding, FindingCode, Patch, RepairAction, RepairBatch};

/// Outcome of checking one inode.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InodeVerdict {
    pub inode: u64,
    /// Kind after repair; `None` when free or cleared.
    pub kind: Option<InodeKind>,
    pub findings: Vec<Finding>,
    pub patches: Vec<Patch>,
    /// `(block, slot)` for every block the repaired inode names.
    pub claims: Vec<(u64, u32)>,
    /// `(block, logical index)` for directory data blocks.
    pub dir_blocks: Vec<(u64, u32)>,
}

impl InodeVerdict {
    fn reset(&mut self, ino: u64) {
        self.inode = ino;
        self.kind = None;
        self.findings.clear();
        self.patches.clear();
        self.claims.clear();
        self.dir_blocks.clear();
    }
}

fn inode_patch(geo: &Geometry, ino: u64, raw: [u8; INODE_SIZE]) -> Patch {
    let (block, off) = geo.inode_location(ino);
    Patch::Bytes { block, offset: off as u32, data: raw.to_vec() }
}

/// Checks inode `ino` given its raw bytes. Indirect blocks are read
/// through `reader`. The result describes repairs without applying them.
pub fn check_inode(geo: &Geometry, ino: u64, raw: &[u8], reader: &mut dyn BlockRead, out: &mut InodeVerdict) -> Result<()> {
    out.reset(ino);
    let inode = Inode::decode(raw);
    if !inode.in_use() {
        return Ok(());
    }
    let (stored, computed) = inode_checksums(raw);
    let bad_csum = stored != computed;
    let Some(kind) = inode.kind() else {
        if bad_csum {
            out.findings.push(Finding::new(
                FindingCode::BadInodeChecksum,
                ino,
                0,
                0,
                RepairAction::InodeCleared,
                format!("stored {stored:#010x} computed {computed:#010x}"),
            ));
        }
        out.findings.push(Finding::new(
            FindingCode::BadMode,
            ino,
            0,
            0,
            RepairAction::InodeCleared,
            format!("mode {:#06x}", inode.mode),
        ));
        out.patches.push(inode_patch(geo, ino, [0; INODE_SIZE]));
        return Ok(());
    };

    let mut fixed = inode;
    let mut changed = false;
    let mut shrink = false;
    let mut entries: Vec<(usize, u64)> = Vec::new();
    if !inode.is_inline_symlink() {
        let limit = inode.size.div_ceil(BLOCK_SIZE as u64);
        for i in 0..DIRECT_POINTERS {
            let p = fixed.direct[i];
            if p == 0 {
                continue;
            }
            let why = if !geo.is_data_block(p) {
                shrink = true;
                "outside data area"
            } else if i as u64 >= limit {
                "beyond size"
            } else {
                continue;
            };
            out.findings.push(Finding::new(
                FindingCode::PointerOutOfRange,
                ino,
                p,
                i as u64,
                RepairAction::PointerZeroed,
                format!("direct[{i}]={p} {why}"),
            ));
            fixed.direct[i] = 0;
            changed = true;
        }
        let p = fixed.indirect;
        if p != 0 {
            let why = if !geo.is_data_block(p) {
                shrink = true;
                Some("outside data area")
            } else if limit <= DIRECT_POINTERS as u64 {
                Some("beyond size")
            } else {
                None
            };
            if let Some(why) = why {
                out.findings.push(Finding::new(
                    FindingCode::PointerOutOfRange,
                    ino,
                    p,
                    INDIRECT_SLOT as u64,
                    RepairAction::PointerZeroed,
                    format!("indirect={p} {why}"),
                ));
                fixed.indirect = 0;
                changed = true;
            } else {
                let block = reader.read(p, ScanKind::Random)?;
                for j in 0..POINTERS_PER_BLOCK {
                    let e = pointer_at(block, j);
                    if e == 0 {
                        continue;
                    }
                    let logical = (DIRECT_POINTERS + j) as u64;
                    let why = if !geo.is_data_block(e) {
                        shrink = true;
                        "outside data area"
                    } else if logical >= limit {
                        "beyond size"
                    } else {
                        entries.push((j, e));
                        continue;
                    };
                    out.findings.push(Finding::new(
                        FindingCode::PointerOutOfRange,
                        ino,
                        e,
                        INDIRECT_SLOT as u64 + 1 + j as u64,
                        RepairAction::PointerZeroed,
                        format!("indirect[{j}]={e} {why}"),
                    ));
                    out.patches.push(Patch::Bytes { block: p, offset: (j * 8) as u32, data: vec![0; 8] });
                }
            }
        }
        if shrink {
            let last_direct = fixed.direct.iter().rposition(|&p| p != 0).map(|i| i as u64);
            let last_entry = entries.last().map(|&(j, _)| (DIRECT_POINTERS + j) as u64);
            let mapped = last_entry.or(last_direct).map_or(0, |l| (l + 1) * BLOCK_SIZE as u64);
            let new_size = inode.size.min(mapped);
            if new_size != fixed.size {
                fixed.size = new_size;
                changed = true;
            }
        }
    }
    if bad_csum {
        out.findings.push(Finding::new(
            FindingCode::BadInodeChecksum,
            ino,
            0,
            0,
            RepairAction::ChecksumRewritten,
            format!("stored {stored:#010x} computed {computed:#010x}"),
        ));
        changed = true;
    }
    if changed {
        fixed.seal();
        out.patches.push(inode_patch(geo, ino, fixed.encode()));
    }

    out.kind = Some(kind);
    let is_dir = kind == InodeKind::Directory;
    if !fixed.is_inline_symlink() {
        for (i, &p) in fixed.direct.iter().enumerate() {
            if p != 0 {
                out.claims.push((p, i as u32));
                if is_dir {
                    out.dir_blocks.push((p, i as u32));
                }
            }
        }
        if fixed.indirect != 0 {
            out.claims.push((fixed.indirect, INDIRECT_SLOT));
            for &(j, e) in &entries {
                out.claims.push((e, INDIRECT_SLOT + 1 + j as u32));
                if is_dir {
                    out.dir_blocks.push((e, (DIRECT_POINTERS + j) as u32));
                }
            }
        }
    }
    Ok(())
}

/// Every `(block, slot)` the inode names, reading its indirect block from
/// `image`. Assumes pass-1 repairs are applied.
fn claims_of(inode: &Inode, image: &Image) -> Result<Vec<(u64, u32)>> {
    let mut out = Vec::new();
    if inode.is_inline_symlink() {
        return Ok(out);
    }
    for (i, &p) in inode.direct.iter().enumerate() {
        if p != 0 {
            out.push((p, i as u32));
        }
    }
    if inode.indirect != 0 {
        out.push((inode.indirect, INDIRECT_SLOT));
        let block = image.read_block(inode.indirect)?;
        for j in 0..POINTERS_PER_BLOCK {
            let e = pointer_at(block, j);
            if e != 0 {
                out.push((e, INDIRECT_SLOT + 1 + j as u32));
            }
        }
    }
    Ok(out)
}

/// Pass 1B: rescans in-use inodes to list every claimant of each
/// multiply-claimed block.
pub fn collect_claimants(state: &mut ShadowState, image: &Image) -> Result<()> {
    if state.multi_claims.is_empty() {
        return Ok(());
    }
    for v in state.multi_claims.values_mut() {
        v.clear();
    }
    let geo = state.geometry;
    let inodes: Vec<u64> = state.in_use_inodes().collect();
    for ino in inodes {
        let inode = Inode::decode(image.inode_bytes(&geo, ino)?);
        for (block, slot) in claims_of(&inode, image)? {
            if let Some(v) = state.multi_claims.get_mut(&block) {
                v.push(Claim { inode: ino, slot });
            }
        }
    }
    Ok(())
}

/// Resolves multiply-claimed blocks: the lowest `(inode, slot)` claim
/// keeps each block, every other claimant's pointer is zeroed. Losing an
/// indirect pointer drops that inode's entries too, which can settle other
/// conflicts, so this iterates to a fixpoint.
///
/// Updates `state` (claims, db_list) and returns the findings and patches.
pub fn resolve_multi_claims(state: &mut ShadowState, image: &Image) -> Result<(Vec<Finding>, Vec<RepairBatch>)> {
    collect_claimants(state, image)?;
    if state.multi_claims.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let geo = state.geometry;

    // Every live claim on an involved block, plus entries hanging off
    // indirect blocks of involved inodes (needed for cascading).
    let mut involved: BTreeMap<u64, Inode> = BTreeMap::new();
    for claims in state.multi_claims.values() {
        for c in claims {
            if let std::collections::btree_map::Entry::Vacant(e) = involved.entry(c.inode) {
                e.insert(Inode::decode(image.inode_bytes(&geo, c.inode)?));
            }
        }
    }
    let mut all_claims: BTreeMap<u64, Vec<(u64, u32)>> = BTreeMap::new();
    for (&ino, inode) in &involved {
        all_claims.insert(ino, claims_of(inode, image)?);
    }
    let mut claimants_of: BTreeMap<u64, Vec<Claim>> = BTreeMap::new();
    for (&ino, claims) in &all_claims {
        for &(block, slot) in claims {
            claimants_of.entry(block).or_default().push(Claim { inode: ino, slot });
        }
    }
    for v in claimants_of.values_mut() {
        v.sort_unstable();
    }

    let mut dead: BTreeMap<Claim, bool> = BTreeMap::new(); // claim -> directly killed
    loop {
        let mut progressed = false;
        for &block in state.multi_claims.keys() {
            let live: Vec<Claim> = claimants_of[&block].iter().copied().filter(|c| !dead.contains_key(c)).collect();
            for c in live.iter().skip(1) {
                dead.insert(*c, true);
                progressed = true;
                if c.slot == INDIRECT_SLOT {
                    for &(_, slot) in &all_claims[&c.inode] {
                        if slot > INDIRECT_SLOT {
                            dead.entry(Claim { inode: c.inode, slot }).or_insert(false);
                        }
                    }
                }
            }
        }
        if !progressed {
            break;
        }
    }

    let mut findings = Vec::new();
    let mut batches = Vec::new();
    let mut rewritten: BTreeMap<u64, Inode> = BTreeMap::new();
    let mut lost_dir_blocks: Vec<(u64, u64, u32)> = Vec::new();
    let block_of = |ino: u64, slot: u32| -> u64 {
        all_claims[&ino].iter().find(|&&(_, s)| s == slot).map(|&(b, _)| b).unwrap_or(0)
    };
    for (&claim, &direct) in &dead {
        let block = block_of(claim.inode, claim.slot);
        if state.is_dir(claim.inode) && claim.slot != INDIRECT_SLOT {
            let logical = if claim.slot < INDIRECT_SLOT { claim.slot } else { claim.slot - 1 };
            lost_dir_blocks.push((claim.inode, block, logical));
        }
        if !direct {
            continue;
        }
        let names: Vec<String> =
            claimants_of[&block].iter().map(|c| format!("{}", c.inode)).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let f = Finding::new(
            FindingCode::MultiplyClaimedBlock,
            claim.inode,
            block,
            claim.slot as u64,
            RepairAction::PointerZeroed,
            format!("block {block} claimed by inodes {}", names.join(",")),
        );
        let mut patches = Vec::new();
        if claim.slot > INDIRECT_SLOT {
            let ind = involved[&claim.inode].indirect;
            let j = claim.slot - INDIRECT_SLOT - 1;
            patches.push(Patch::Bytes { block: ind, offset: j * 8, data: vec![0; 8] });
        } else {
            let inode = rewritten.entry(claim.inode).or_insert(involved[&claim.inode]);
            if claim.slot == INDIRECT_SLOT {
                inode.indirect = 0;
            } else {
                inode.direct[claim.slot as usize] = 0;
            }
        }
        batches.push(RepairBatch { key: f.key(), patches });
        findings.push(f);
    }
    // Inode rewrites ride on the batch of the lowest finding for that inode.
    for (ino, mut inode) in rewritten {
        inode.seal();
        let (block, off) = geo.inode_location(ino);
        let patch = Patch::Bytes { block, offset: off as u32, data: inode.encode().to_vec() };
        let batch = batches.iter_mut().filter(|b| b.key.2 == ino).min_by_key(|b| b.key).expect("finding exists");
        batch.patches.push(patch);
    }

    // Blocks left with no live claim drop out of the claimed set. Every
    // claimant of such a block is an involved inode, so the list is complete.
    for (&block, claims) in &claimants_of {
        if claims.iter().all(|c| dead.contains_key(c)) {
            state.claimed_blocks.clear(block);
        }
    }
    if !lost_dir_blocks.is_empty() {
        lost_dir_blocks.sort_unstable();
        state.db_list.retain(|r: &DirBlockRef| lost_dir_blocks.binary_search(&(r.dir, r.block, r.logical)).is_err());
    }
    Ok((findings, batches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::DirectReader;
    use crate::format::INODE_SIZE;

    fn geo() -> Geometry {
        Geometry::compute(4096, 256).unwrap()
    }

    fn file(direct: &[u64], size: u64) -> [u8; INODE_SIZE] {
        let mut i = Inode { mode: InodeKind::Regular.mode_bits() | 0o644, links_count: 1, size, ..Inode::default() };
        i.direct[..direct.len()].copy_from_slice(direct);
        i.seal();
        i.encode()
    }

    #[test]
    fn pristine_file_claims_each_block_once() {
        let g = geo();
        let img = Image::zeroed(g.total_blocks);
        let raw = file(&[100, 101], 5000);
        let mut v = InodeVerdict::default();
        check_inode(&g, 5, &raw, &mut DirectReader(&img), &mut v).unwrap();
        assert!(v.findings.is_empty());
        assert_eq!(v.claims, vec![(100, 0), (101, 1)]);
    }

    #[test]
    fn out_of_range_pointer_is_zeroed_and_size_shrunk() {
        let g = geo();
        let img = Image::zeroed(g.total_blocks);
        let raw = file(&[100, g.total_blocks + 5], 8000);
        let mut v = InodeVerdict::default();
        check_inode(&g, 5, &raw, &mut DirectReader(&img), &mut v).unwrap();
        assert_eq!(v.findings.len(), 1);
        assert_eq!(v.findings[0].code, FindingCode::PointerOutOfRange);
        assert_eq!(v.findings[0].offset, 1);
        let Patch::Bytes { data, .. } = &v.patches[0] else { panic!() };
        let fixed = Inode::decode(data);
        assert_eq!(fixed.direct[1], 0);
        assert_eq!(fixed.size, 4096);
        assert_eq!(inode_checksums(data).0, inode_checksums(data).1);
    }

    #[test]
    fn bad_mode_clears_and_reports_checksum_too() {
        let g = geo();
        let img = Image::zeroed(g.total_blocks);
        let mut raw = file(&[100], 10);
        raw[1] = 0x30;
        let mut v = InodeVerdict::default();
        check_inode(&g, 5, &raw, &mut DirectReader(&img), &mut v).unwrap();
        let codes: Vec<_> = v.findings.iter().map(|f| f.code).collect();
        assert_eq!(codes, vec![FindingCode::BadInodeChecksum, FindingCode::BadMode]);
        assert!(v.kind.is_none() && v.claims.is_empty());
    }
}
