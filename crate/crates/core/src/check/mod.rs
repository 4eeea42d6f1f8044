//! Five-pass check and repair.
//!
//! | pass | examines                       | repairs                                  |
//! |------|--------------------------------|------------------------------------------|
//! | 1    | inodes, block pointers, claims | clear bad-mode inodes, zero bad pointers |
//! | 2    | directory blocks, `..` entries | clear/rewrite dirents, rewrite checksums |
//! | 3    | reachability from the root     | reconnect under `lost+found`             |
//! | 4    | link counts                    | rewrite `links_count`, reconnect orphans |
//! | 5    | on-disk bitmaps, free counts   | rewrite bits and superblock counts       |
//!
//! Every pass is split into a pure *verdict* step (what is wrong and which
//! bytes fix it) and an *apply* step. The serial checker applies verdicts as
//! it goes; the parallel engine routes them through its repair barrier.
//! Both produce the same findings and the same repaired bytes.

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, CacheStats};
use crate::error::Result;
use crate::image::Image;

pub mod pass1;
pub mod pass2;
pub mod pass3;
pub mod pass4;
pub mod pass5;
pub mod repair;
pub mod serial;
pub mod shadow;

pub use pass1::{check_inode, collect_claimants, resolve_multi_claims, InodeVerdict};
pub use pass2::{
    check_dir_block, pass2_verify_dotdot, resolve_extra_links, targets_ready, verify_directories,
    DirBlockVerdict, DotDotDecision,
};
pub use pass3::pass3_connectivity;
pub use pass4::pass4_refcounts;
pub use pass5::{pass5_bitmaps, pass5_block_range, pass5_free_counts, pass5_inode_range};
pub use serial::run_serial;
pub use shadow::{Claim, DirBlockRef, DirentLoc, ShadowState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingCode {
    BadInodeChecksum,
    BadMode,
    PointerOutOfRange,
    MultiplyClaimedBlock,
    BadDirChecksum,
    BadDirent,
    DanglingDirent,
    DotDotMismatch,
    UnreachableDirectory,
    WrongLinksCount,
    ZeroLinkInUse,
    BlockBitmapMismatch,
    InodeBitmapMismatch,
    FreeCountMismatch,
}

impl FindingCode {
    pub fn pass(self) -> u8 {
        use FindingCode::*;
        match self {
            BadInodeChecksum | BadMode | PointerOutOfRange | MultiplyClaimedBlock => 1,
            BadDirChecksum | BadDirent | DanglingDirent | DotDotMismatch => 2,
            UnreachableDirectory => 3,
            WrongLinksCount | ZeroLinkInUse => 4,
            BlockBitmapMismatch | InodeBitmapMismatch | FreeCountMismatch => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        use FindingCode::*;
        match self {
            BadInodeChecksum => "BadInodeChecksum",
            BadMode => "BadMode",
            PointerOutOfRange => "PointerOutOfRange",
            MultiplyClaimedBlock => "MultiplyClaimedBlock",
            BadDirChecksum => "BadDirChecksum",
            BadDirent => "BadDirent",
            DanglingDirent => "DanglingDirent",
            DotDotMismatch => "DotDotMismatch",
            UnreachableDirectory => "UnreachableDirectory",
            WrongLinksCount => "WrongLinksCount",
            ZeroLinkInUse => "ZeroLinkInUse",
            BlockBitmapMismatch => "BlockBitmapMismatch",
            InodeBitmapMismatch => "InodeBitmapMismatch",
            FreeCountMismatch => "FreeCountMismatch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RepairAction {
    ChecksumRewritten,
    InodeCleared,
    PointerZeroed,
    DirChecksumRewritten,
    DirentRewritten,
    DirentCleared,
    DirBlockTruncated,
    DotDotRewritten,
    ReconnectedToLostFound,
    LinksCountRewritten,
    BitmapBitRewritten,
    FreeCountRewritten,
    NotRepaired,
}

/// Canonical identity of a finding: `(pass, code, inode, block, offset)`.
pub type FindingKey = (u8, FindingCode, u64, u64, u64);

/// One detected inconsistency and the repair applied for it.
///
/// `inode`, `block` and `offset` are 0 where they do not apply. For
/// pointer findings `offset` is the claim slot (0-9 direct, 10 the
/// indirect block, 11+j indirect entry j); for dirent findings it is the
/// byte offset of the record; for `FreeCountMismatch` 0 means blocks and
/// 1 means inodes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub pass: u8,
    pub code: FindingCode,
    pub inode: u64,
    pub block: u64,
    pub offset: u64,
    pub repair: RepairAction,
    pub detail: String,
}

impl Finding {
    pub fn new(code: FindingCode, inode: u64, block: u64, offset: u64, repair: RepairAction, detail: impl Into<String>) -> Finding {
        Finding { pass: code.pass(), code, inode, block, offset, repair, detail: detail.into() }
    }

    pub fn key(&self) -> FindingKey {
        (self.pass, self.code, self.inode, self.block, self.offset)
    }

    pub fn to_line(&self) -> String {
        format!(
            "pass={} code={} inode={} block={} offset={} repair={:?} detail={:?}",
            self.pass,
            self.code.as_str(),
            self.inode,
            self.block,
            self.offset,
            self.repair,
            self.detail
        )
    }
}

/// A byte-level change to the image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Patch {
    Bytes { block: u64, offset: u32, data: Vec<u8> },
    Bit { block: u64, bit: u32, value: bool },
}

impl Patch {
    pub fn block(&self) -> u64 {
        match self {
            Patch::Bytes { block, .. } | Patch::Bit { block, .. } => *block,
        }
    }

    pub fn apply(&self, image: &mut Image) -> Result<()> {
        match self {
            Patch::Bytes { block, offset, data } => {
                let b = image.block_mut(*block)?;
                b[*offset as usize..*offset as usize + data.len()].copy_from_slice(data);
            }
            Patch::Bit { block, bit, value } => image.set_bit(*block, *bit, *value)?,
        }
        Ok(())
    }
}

/// Patches that together repair the finding(s) keyed by `key`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RepairBatch {
    pub key: FindingKey,
    pub patches: Vec<Patch>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckStats {
    /// Objects examined by each pass: inodes, directory blocks,
    /// directories, in-use inodes, bitmap bits.
    pub objects_checked: [u64; 5],
    /// Block claims made in pass 1, counted with multiplicity.
    pub blocks_claimed: u64,
}

impl CheckStats {
    pub fn add(&mut self, o: &CheckStats) {
        for (a, b) in self.objects_checked.iter_mut().zip(o.objects_checked) {
            *a += b;
        }
        self.blocks_claimed += o.blocks_claimed;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassTimings {
    pub pass: [Duration; 5],
    pub total: Duration,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report {
    pub findings: Vec<Finding>,
    pub stats: CheckStats,
    pub timings: PassTimings,
    pub cache: CacheStats,
    /// Stop-the-world repair barriers taken (parallel modes only).
    pub barriers: u64,
}

impl Report {
    pub fn canonicalize(&mut self) {
        self.findings.sort();
    }

    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn findings_in_pass(&self, pass: u8) -> usize {
        self.findings.iter().filter(|f| f.pass == pass).count()
    }

    /// One line per finding in canonical order, then a summary line.
    /// Identical for every run mode on the same input.
    pub fn canonical_text(&self) -> String {
        let mut sorted: Vec<&Finding> = self.findings.iter().collect();
        sorted.sort();
        let mut out = String::new();
        for f in sorted {
            out.push_str(&f.to_line());
            out.push('\n');
        }
        let c = self.stats.objects_checked;
        let _ = writeln!(
            out,
            "summary findings={} checked={},{},{},{},{} claims={}",
            self.findings.len(),
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            self.stats.blocks_claimed
        );
        out
    }

    /// JSON object with the same content as `canonical_text`.
    pub fn structured(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            findings: Vec<&'a Finding>,
            objects_checked: [u64; 5],
            blocks_claimed: u64,
        }
        let mut findings: Vec<&Finding> = self.findings.iter().collect();
        findings.sort();
        let out = Out { findings, objects_checked: self.stats.objects_checked, blocks_claimed: self.stats.blocks_claimed };
        let mut s = serde_json::to_string(&out).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Options shared by every run mode.
#[derive(Clone, Debug, Default)]
pub struct CheckOptions {
    pub cache: CacheConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_ignores_insertion_order() {
        let a = Finding::new(FindingCode::BadMode, 9, 0, 0, RepairAction::InodeCleared, "x");
        let b = Finding::new(FindingCode::BlockBitmapMismatch, 0, 77, 0, RepairAction::BitmapBitRewritten, "y");
        let c = Finding::new(FindingCode::BadMode, 4, 0, 0, RepairAction::InodeCleared, "z");
        let r1 = Report { findings: vec![a.clone(), b.clone(), c.clone()], ..Report::default() };
        let r2 = Report { findings: vec![b, c, a], ..Report::default() };
        assert_eq!(r1.canonical_text(), r2.canonical_text());
        assert_eq!(r1.structured(), r2.structured());
        assert!(r1.canonical_text().starts_with("pass=1 code=BadMode inode=4"));
    }

    #[test]
    fn code_pass_mapping() {
        assert_eq!(FindingCode::MultiplyClaimedBlock.pass(), 1);
        assert_eq!(FindingCode::DotDotMismatch.pass(), 2);
        assert_eq!(FindingCode::UnreachableDirectory.pass(), 3);
        assert_eq!(FindingCode::ZeroLinkInUse.pass(), 4);
        assert_eq!(FindingCode::FreeCountMismatch.pass(), 5);
    }
}
