//! Recorded corruption of pristine images.
//!
//! Every record owns the objects it touches and the objects whose state
//! decides whether it is detected (an inode and its blocks, a whole
//! directory block, one bitmap byte). Records never share an object, so
//! their byte ranges are disjoint and each one is detected on its own
//! terms regardless of what else is in the plan.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::check::FindingCode;
use crate::error::{Error, Result};
use crate::format::{
    iterate_dirents, pointer_at, seal_dir_block, set_dirent_inode, set_dirent_rec_len, DirentItem, Geometry, Inode,
    InodeKind, BLOCK_SIZE, DIR_TAIL_OFFSET, INODE_SIZE, LOST_FOUND_INODE, POINTERS_PER_BLOCK,
};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CorruptionKind {
    BitmapBlockFlip,
    BitmapInodeFlip,
    InodeBadMode,
    InodeBadPointer,
    InodeBadLinks,
    InodeBadChecksum,
    DirentBadInode,
    DirentBadRecLen,
    DirBlockBadChecksum,
    DuplicateBlockClaim,
    OrphanDirectory,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 11] = [
        CorruptionKind::BitmapBlockFlip,
        CorruptionKind::BitmapInodeFlip,
        CorruptionKind::InodeBadMode,
        CorruptionKind::InodeBadPointer,
        CorruptionKind::InodeBadLinks,
        CorruptionKind::InodeBadChecksum,
        CorruptionKind::DirentBadInode,
        CorruptionKind::DirentBadRecLen,
        CorruptionKind::DirBlockBadChecksum,
        CorruptionKind::DuplicateBlockClaim,
        CorruptionKind::OrphanDirectory,
    ];

    /// Finding code the checker reports for this corruption.
    pub fn expected_code(self) -> FindingCode {
        use CorruptionKind::*;
        match self {
            BitmapBlockFlip => FindingCode::BlockBitmapMismatch,
            BitmapInodeFlip => FindingCode::InodeBitmapMismatch,
            InodeBadMode => FindingCode::BadMode,
            InodeBadPointer => FindingCode::PointerOutOfRange,
            InodeBadLinks => FindingCode::WrongLinksCount,
            InodeBadChecksum => FindingCode::BadInodeChecksum,
            DirentBadInode => FindingCode::DanglingDirent,
            DirentBadRecLen => FindingCode::BadDirent,
            DirBlockBadChecksum => FindingCode::BadDirChecksum,
            DuplicateBlockClaim => FindingCode::MultiplyClaimedBlock,
            OrphanDirectory => FindingCode::UnreachableDirectory,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<CorruptionKind> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown corruption kind {s:?}")))
    }
}

/// Parses `Kind:count,Kind:count`. A bare kind means count 1.
pub fn parse_plan(text: &str) -> Result<Vec<(CorruptionKind, u32)>> {
    let mut plan = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (kind, count) = match part.split_once(':') {
            Some((k, c)) => (k, c.trim().parse::<u32>().map_err(|e| Error::Config(format!("count in {part:?}: {e}")))?),
            None => (part, 1),
        };
        plan.push((kind.trim().parse()?, count));
    }
    Ok(plan)
}

/// One applied corruption. `inode`/`block`/`offset` name the subject
/// (0 where not applicable); `aux_inode` is the second inode of a
/// duplicate claim. `original` and `corrupted` are hex byte strings of the
/// range starting at absolute image offset `image_offset`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub kind: CorruptionKind,
    pub inode: u64,
    pub block: u64,
    pub offset: u64,
    pub aux_inode: u64,
    pub image_offset: u64,
    pub original: String,
    pub corrupted: String,
}

impl CorruptionRecord {
    pub fn byte_range(&self) -> (u64, u64) {
        (self.image_offset, self.image_offset + self.original.len() as u64 / 2)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorruptionLedger {
    pub records: Vec<CorruptionRecord>,
}

impl CorruptionLedger {
    /// One JSON object per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<CorruptionLedger> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| Error::Parse { what: "ledger", line: i + 1, msg: e.to_string() })?;
            records.push(r);
        }
        Ok(CorruptionLedger { records })
    }

    /// Writes every record's original bytes back.
    pub fn restore(&self, image: &mut Image) -> Result<()> {
        for r in self.records.iter().rev() {
            let bytes = hex::decode(&r.original).map_err(|e| Error::Parse { what: "ledger", line: 0, msg: e.to_string() })?;
            image.write_at(r.image_offset, &bytes);
        }
        Ok(())
    }

    /// Whether any two records' byte ranges intersect.
    pub fn has_overlap(&self) -> bool {
        let mut ranges: Vec<(u64, u64)> = self.records.iter().map(|r| r.byte_range()).collect();
        ranges.sort_unstable();
        ranges.windows(2).any(|w| w[1].0 < w[0].1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Obj {
    Inode(u64),
    Block(u64),
    BlockBitmapByte(u64),
    InodeBitmapByte(u64),
}

#[derive(Clone, Copy, Debug)]
struct DirentSite {
    dir: u64,
    block: u64,
    offset: usize,
    target: u64,
}

/// What the injector needs to know about a pristine image.
struct Scan {
    geo: Geometry,
    inodes: Vec<(u64, Inode)>,
    kind: FxHashMap<u64, InodeKind>,
    /// Data blocks plus the indirect block, per inode.
    blocks: FxHashMap<u64, Vec<u64>>,
    /// Direct-pointer slots in use, per regular file.
    direct_slots: FxHashMap<u64, Vec<usize>>,
    dir_blocks: Vec<(u64, u64)>,
    /// Name dirents (not `.`/`..`).
    dirents: Vec<DirentSite>,
    parent_site: FxHashMap<u64, DirentSite>,
    free_inodes: Vec<u64>,
    owner: FxHashMap<u64, u64>,
}

fn scan(image: &Image) -> Result<Scan> {
    let geo = image.superblock()?.geometry();
    let mut s = Scan {
        geo,
        inodes: Vec::new(),
        kind: FxHashMap::default(),
        blocks: FxHashMap::default(),
        direct_slots: FxHashMap::default(),
        dir_blocks: Vec::new(),
        dirents: Vec::new(),
        parent_site: FxHashMap::default(),
        free_inodes: Vec::new(),
        owner: FxHashMap::default(),
    };
    for ino in 2..geo.total_inodes {
        let inode = Inode::decode(image.inode_bytes(&geo, ino)?);
        let Some(kind) = inode.kind() else {
            if ino >= 4 {
                s.free_inodes.push(ino);
            }
            continue;
        };
        let mut blocks = Vec::new();
        let mut slots = Vec::new();
        if !inode.is_inline_symlink() {
            for (i, &p) in inode.direct.iter().enumerate() {
                if p != 0 {
                    blocks.push(p);
                    slots.push(i);
                }
            }
            if inode.indirect != 0 {
                blocks.push(inode.indirect);
                let ind = image.read_block(inode.indirect)?;
                for j in 0..POINTERS_PER_BLOCK {
                    let e = pointer_at(ind, j);
                    if e != 0 {
                        blocks.push(e);
                        if kind == InodeKind::Directory {
                            s.dir_blocks.push((ino, e));
                        }
                    }
                }
            }
        }
        if kind == InodeKind::Directory {
            for &i in &slots {
                s.dir_blocks.push((ino, inode.direct[i]));
            }
        }
        for &b in &blocks {
            s.owner.insert(b, ino);
        }
        if kind == InodeKind::Regular {
            s.direct_slots.insert(ino, slots);
        }
        s.blocks.insert(ino, blocks);
        s.kind.insert(ino, kind);
        s.inodes.push((ino, inode));
    }
    s.dir_blocks.sort_unstable();
    for &(dir, block) in &s.dir_blocks {
        let b = image.read_block(block)?;
        for item in iterate_dirents(b) {
            if let DirentItem::Entry { offset, entry } = item {
                if entry.inode == 0 || entry.is_dot() || entry.is_dotdot() {
                    continue;
                }
                let site = DirentSite { dir, block, offset, target: entry.inode };
                s.dirents.push(site);
                s.parent_site.insert(entry.inode, site);
            }
        }
    }
    Ok(s)
}

struct Injector<'a> {
    image: &'a mut Image,
    scan: Scan,
    rng: ChaCha8Rng,
    reserved: FxHashSet<Obj>,
    ledger: CorruptionLedger,
}

impl Injector<'_> {
    fn free(&self, objs: &[Obj]) -> bool {
        objs.iter().all(|o| !self.reserved.contains(o))
    }

    fn inode_objs(&self, ino: u64) -> Vec<Obj> {
        let mut v = vec![Obj::Inode(ino)];
        if let Some(bs) = self.scan.blocks.get(&ino) {
            v.extend(bs.iter().map(|&b| Obj::Block(b)));
        }
        v
    }

    fn user_inodes(&self, kind: Option<InodeKind>) -> Vec<u64> {
        self.scan
            .inodes
            .iter()
            .filter(|(ino, i)| *ino > LOST_FOUND_INODE && (kind.is_none() || i.kind() == kind))
            .map(|(ino, _)| *ino)
            .collect()
    }

    fn inode_of(&self, ino: u64) -> Inode {
        self.scan.inodes.iter().find(|(i, _)| *i == ino).map(|(_, n)| *n).expect("scanned inode")
    }

    /// Replaces the 128 bytes of `ino` and records it.
    fn write_inode(&mut self, kind: CorruptionKind, ino: u64, block: u64, offset: u64, aux: u64, new: [u8; INODE_SIZE], objs: Vec<Obj>) {
        let (tb, off) = self.scan.geo.inode_location(ino);
        let at = tb * BLOCK_SIZE as u64 + off as u64;
        self.record(kind, ino, block, offset, aux, at, &new, objs);
    }

    #[allow(clippy::too_many_arguments)]
    fn record(&mut self, kind: CorruptionKind, inode: u64, block: u64, offset: u64, aux: u64, at: u64, new: &[u8], objs: Vec<Obj>) {
        let original = hex::encode(self.image.bytes_at(at, new.len()));
        self.image.write_at(at, new);
        self.reserved.extend(objs);
        self.ledger.records.push(CorruptionRecord {
            kind,
            inode,
            block,
            offset,
            aux_inode: aux,
            image_offset: at,
            original,
            corrupted: hex::encode(new),
        });
    }

    fn write_dir_block(&mut self, kind: CorruptionKind, site: DirentSite, aux: u64, new: &[u8], mut objs: Vec<Obj>) {
        objs.push(Obj::Block(site.block));
        let at = site.block * BLOCK_SIZE as u64;
        self.record(kind, site.dir, site.block, site.offset as u64, aux, at, new, objs);
    }

    fn inject_one(&mut self, kind: CorruptionKind) -> Result<()> {
        use CorruptionKind::*;
        let geo = self.scan.geo;
        match kind {
            BitmapBlockFlip => {
                let mut cands: Vec<u64> = (geo.first_data_block..geo.total_blocks).collect();
                cands.shuffle(&mut self.rng);
                for b in cands {
                    let (bb, bit) = geo.block_bit(b);
                    let byte = bb * BLOCK_SIZE as u64 + bit as u64 / 8;
                    let mut objs = vec![Obj::Block(b), Obj::BlockBitmapByte(byte)];
                    if let Some(&o) = self.scan.owner.get(&b) {
                        if o <= LOST_FOUND_INODE {
                            continue;
                        }
                        objs.extend(self.inode_objs(o));
                    }
                    if self.free(&objs) {
                        let new = [self.image.bytes_at(byte, 1)[0] ^ (1 << (bit % 8))];
                        self.record(kind, 0, b, 0, 0, byte, &new, objs);
                        return Ok(());
                    }
                }
            }
            BitmapInodeFlip => {
                let mut cands: Vec<u64> = (LOST_FOUND_INODE + 1..geo.total_inodes).collect();
                cands.shuffle(&mut self.rng);
                for i in cands {
                    let (ib, bit) = geo.inode_bit(i);
                    let byte = ib * BLOCK_SIZE as u64 + bit as u64 / 8;
                    let mut objs = vec![Obj::InodeBitmapByte(byte)];
                    objs.extend(self.inode_objs(i));
                    if self.free(&objs) {
                        let new = [self.image.bytes_at(byte, 1)[0] ^ (1 << (bit % 8))];
                        self.record(kind, i, 0, 0, 0, byte, &new, objs);
                        return Ok(());
                    }
                }
            }
            InodeBadMode | InodeBadPointer | InodeBadLinks => {
                let mut cands = self.user_inodes(Some(InodeKind::Regular));
                cands.shuffle(&mut self.rng);
                for ino in cands {
                    let mut objs = self.inode_objs(ino);
                    let site = self.scan.parent_site.get(&ino).copied();
                    if kind == InodeBadLinks {
                        match site {
                            Some(s) => objs.push(Obj::Block(s.block)),
                            None => continue,
                        }
                    }
                    let slots = self.scan.direct_slots.get(&ino).cloned().unwrap_or_default();
                    if kind == InodeBadPointer && slots.is_empty() {
                        continue;
                    }
                    if !self.free(&objs) {
                        continue;
                    }
                    let mut inode = self.inode_of(ino);
                    let (mut block, mut offset) = (0, 0);
                    match kind {
                        InodeBadMode => {
                            const BAD: [u16; 11] = [0x1, 0x2, 0x3, 0x5, 0x6, 0x7, 0x9, 0xB, 0xC, 0xD, 0xE];
                            let t = *BAD.choose(&mut self.rng).unwrap();
                            inode.mode = (t << 12) | (inode.mode & 0x0FFF);
                        }
                        InodeBadPointer => {
                            let k = *slots.choose(&mut self.rng).unwrap();
                            let bad = if self.rng.gen_bool(0.5) {
                                geo.total_blocks + self.rng.gen_range(0..1000)
                            } else {
                                self.rng.gen_range(1..geo.first_data_block)
                            };
                            inode.direct[k] = bad;
                            block = bad;
                            offset = k as u64;
                        }
                        _ => {
                            inode.links_count = inode.links_count.saturating_add(1 + self.rng.gen_range(0..5));
                        }
                    }
                    inode.seal();
                    self.write_inode(kind, ino, block, offset, 0, inode.encode(), objs);
                    return Ok(());
                }
            }
            InodeBadChecksum => {
                let mut cands = self.user_inodes(None);
                cands.shuffle(&mut self.rng);
                for ino in cands {
                    let objs = vec![Obj::Inode(ino)];
                    if !self.free(&objs) {
                        continue;
                    }
                    let mut inode = self.inode_of(ino);
                    inode.checksum ^= self.rng.gen_range(1..=u32::MAX);
                    self.write_inode(kind, ino, 0, 0, 0, inode.encode(), objs);
                    return Ok(());
                }
            }
            DirentBadInode | DirentBadRecLen | OrphanDirectory => {
                let mut cands: Vec<DirentSite> = self
                    .scan
                    .dirents
                    .iter()
                    .copied()
                    .filter(|s| s.target != LOST_FOUND_INODE && s.dir != LOST_FOUND_INODE)
                    .filter(|s| kind != OrphanDirectory || self.scan.kind.get(&s.target) == Some(&InodeKind::Directory))
                    .collect();
                cands.shuffle(&mut self.rng);
                for site in cands {
                    let mut objs = vec![Obj::Block(site.block)];
                    if kind != DirentBadRecLen {
                        objs.push(Obj::Inode(site.target));
                    }
                    if !self.free(&objs) {
                        continue;
                    }
                    let mut buf = self.image.read_block(site.block)?.to_vec();
                    let mut aux = 0;
                    match kind {
                        DirentBadInode => {
                            let bad = self
                                .scan
                                .free_inodes
                                .choose(&mut self.rng)
                                .copied()
                                .unwrap_or_else(|| geo.total_inodes + self.rng.gen_range(0..1000));
                            set_dirent_inode(&mut buf, site.offset, bad);
                            aux = bad;
                        }
                        DirentBadRecLen => {
                            let rec = u16::from_le_bytes([buf[site.offset + 8], buf[site.offset + 9]]);
                            set_dirent_rec_len(&mut buf, site.offset, rec + 2);
                        }
                        _ => {
                            let prev = iterate_dirents(&buf)
                                .filter_map(|it| match it {
                                    DirentItem::Entry { offset, .. } if offset < site.offset => Some(offset),
                                    _ => None,
                                })
                                .last();
                            crate::check::pass2::clear_record(&mut buf, prev, site.offset);
                            aux = site.target;
                        }
                    }
                    seal_dir_block(&mut buf);
                    let site = if kind == OrphanDirectory { DirentSite { dir: site.target, ..site } } else { site };
                    self.write_dir_block(kind, site, aux, &buf, objs);
                    return Ok(());
                }
            }
            DirBlockBadChecksum => {
                let mut cands: Vec<(u64, u64)> =
                    self.scan.dir_blocks.iter().copied().filter(|&(d, _)| d != LOST_FOUND_INODE).collect();
                cands.shuffle(&mut self.rng);
                for (dir, block) in cands {
                    let objs = vec![Obj::Block(block)];
                    if !self.free(&objs) {
                        continue;
                    }
                    let at = block * BLOCK_SIZE as u64 + DIR_TAIL_OFFSET as u64 + 4;
                    let mut crc = self.image.bytes_at(at, 4).to_vec();
                    let flip = self.rng.gen_range(1..=u32::MAX).to_le_bytes();
                    for (c, f) in crc.iter_mut().zip(flip) {
                        *c ^= f;
                    }
                    self.record(kind, dir, block, 0, 0, at, &crc, objs);
                    return Ok(());
                }
            }
            DuplicateBlockClaim => {
                let mut files: Vec<u64> =
                    self.user_inodes(Some(InodeKind::Regular)).into_iter().filter(|i| !self.scan.direct_slots[i].is_empty()).collect();
                files.shuffle(&mut self.rng);
                for &a in &files {
                    if !self.free(&self.inode_objs(a)) {
                        continue;
                    }
                    for &b in &files {
                        if a == b || !self.free(&self.inode_objs(b)) {
                            continue;
                        }
                        let mut objs = self.inode_objs(a);
                        objs.extend(self.inode_objs(b));
                        let ia = self.inode_of(a);
                        let ib = self.inode_of(b);
                        let k = *self.scan.direct_slots[&a].choose(&mut self.rng).unwrap();
                        let m = *self.scan.direct_slots[&b].choose(&mut self.rng).unwrap();
                        let shared = ib.direct[m];
                        let mut na = ia;
                        na.direct[k] = shared;
                        na.seal();
                        self.write_inode(kind, a, shared, k as u64, b, na.encode(), objs);
                        return Ok(());
                    }
                }
            }
        }
        Err(Error::NoEligibleTarget(kind.to_string()))
    }
}

/// Applies `plan` to a pristine `image` and returns what was changed.
/// Deterministic in `(image, plan, seed)`.
pub fn inject_corruptions(image: &mut Image, plan: &[(CorruptionKind, u32)], seed: u64) -> Result<CorruptionLedger> {
    let scan = scan(image)?;
    let mut inj = Injector {
        image,
        scan,
        rng: ChaCha8Rng::seed_from_u64(seed),
        reserved: FxHashSet::default(),
        ledger: CorruptionLedger::default(),
    };
    for &(kind, count) in plan {
        for _ in 0..count {
            inj.inject_one(kind)?;
        }
    }
    Ok(inj.ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::{build_image, ImageSpec};

    fn pristine() -> Image {
        build_image(&ImageSpec::sized_for(60, 8, 3, 11)).unwrap().0
    }

    #[test]
    fn empty_plan_leaves_image_alone() {
        let mut img = pristine();
        let before = img.clone();
        let ledger = inject_corruptions(&mut img, &[], 1).unwrap();
        assert!(ledger.records.is_empty());
        assert_eq!(img, before);
    }

    #[test]
    fn restore_undoes_every_kind() {
        let mut img = pristine();
        let before = img.clone();
        let plan: Vec<_> = CorruptionKind::ALL.iter().map(|&k| (k, 1)).collect();
        let ledger = inject_corruptions(&mut img, &plan, 5).unwrap();
        assert_eq!(ledger.records.len(), CorruptionKind::ALL.len());
        assert!(!ledger.has_overlap());
        assert_ne!(img, before);
        ledger.restore(&mut img).unwrap();
        assert_eq!(img, before);
    }

    #[test]
    fn ledger_round_trips_as_lines() {
        let mut img = pristine();
        let ledger = inject_corruptions(&mut img, &[(CorruptionKind::DuplicateBlockClaim, 1)], 9).unwrap();
        assert_ne!(ledger.records[0].aux_inode, 0);
        assert_eq!(CorruptionLedger::from_lines(&ledger.to_lines()).unwrap(), ledger);
    }

    #[test]
    fn plan_parsing() {
        assert_eq!(
            parse_plan("BitmapBlockFlip:2, orphandirectory").unwrap(),
            vec![(CorruptionKind::BitmapBlockFlip, 2), (CorruptionKind::OrphanDirectory, 1)]
        );
        assert!(parse_plan("Nope:1").is_err());
    }

    #[test]
    fn minimal_image_has_no_dirent_targets() {
        let mut img = build_image(&ImageSpec::sized_for(0, 0, 1, 1)).unwrap().0;
        assert!(matches!(
            inject_corruptions(&mut img, &[(CorruptionKind::DirentBadInode, 1)], 1),
            Err(Error::NoEligibleTarget(_))
        ));
    }
}
