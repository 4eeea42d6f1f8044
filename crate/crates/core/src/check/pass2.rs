//! Directory block checks and `..` verification.

use crate::error::{Error, Result};
use crate::format::{
    dir_block_checksums, iterate_dirents, parse_dirent, seal_dir_block, set_dirent_file_type, set_dirent_inode,
    set_dirent_rec_len, write_dirent_header, DirentItem, InodeKind, DIRENT_HEADER_LEN, DIR_TAIL_OFFSET, FT_DIR,
    ROOT_INODE,
};

use super::shadow::{DirentLoc, ShadowState};
use super::{Finding, FindingCode, RepairAction};

/// Outcome of checking one directory block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DirBlockVerdict {
    pub dir: u64,
    pub block: u64,
    pub findings: Vec<Finding>,
    /// Repaired block contents, when anything changed.
    pub new_bytes: Option<Vec<u8>>,
    /// One entry per live dirent counted toward its target.
    pub icount_incs: Vec<u64>,
    /// First `..` record: `(offset, target)`.
    pub dotdot: Option<(u32, u64)>,
    /// Name dirents naming directories: `(offset, target)`.
    pub subdirs: Vec<(u32, u64)>,
}

/// Whether every inode a block's live name entries point at has been
/// decided by pass 1, so a verdict computed now is final.
pub fn targets_ready(bytes: &[u8], total_inodes: u64, is_processed: impl Fn(u64) -> bool) -> bool {
    for item in iterate_dirents(bytes) {
        if let DirentItem::Entry { entry, .. } = item {
            if entry.inode == 0 || entry.is_dot() || entry.is_dotdot() || entry.name_len == 0 {
                continue;
            }
            if entry.inode >= 2 && entry.inode < total_inodes && !is_processed(entry.inode) {
                return false;
            }
        }
    }
    true
}

fn rec_len_at(buf: &[u8], off: usize) -> usize {
    u16::from_le_bytes([buf[off + 8], buf[off + 9]]) as usize
}

/// Removes the record at `off`: merged into `prev` when there is one,
/// otherwise marked unused in place.
pub(crate) fn clear_record(buf: &mut [u8], prev: Option<usize>, off: usize) {
    match prev {
        Some(p) => {
            let merged = rec_len_at(buf, p) + rec_len_at(buf, off);
            set_dirent_rec_len(buf, p, merged as u16);
        }
        None => set_dirent_inode(buf, off, 0),
    }
}

/// Checks directory block `block` (logical index within `dir`).
/// `kind_of` answers pass-1's verdict for a target inode.
pub fn check_dir_block(dir: u64, block: u64, bytes: &[u8], kind_of: impl Fn(u64) -> Option<InodeKind>) -> DirBlockVerdict {
    let mut v = DirBlockVerdict { dir, block, ..DirBlockVerdict::default() };
    let (magic_ok, stored, computed) = dir_block_checksums(bytes);
    let bad_csum = !magic_ok || stored != computed;
    if bad_csum {
        let detail = if magic_ok {
            format!("stored {stored:#010x} computed {computed:#010x}")
        } else {
            "tail magic missing".to_string()
        };
        v.findings.push(Finding::new(FindingCode::BadDirChecksum, dir, block, 0, RepairAction::DirChecksumRewritten, detail));
    }
    let mut buf = bytes.to_vec();
    let mut modified = false;
    let mut prev: Option<usize> = None;
    let mut off = 0usize;
    let bad = |v: &mut DirBlockVerdict, off: usize, code, repair, detail: String| {
        v.findings.push(Finding::new(code, dir, block, off as u64, repair, detail));
    };
    while off < DIR_TAIL_OFFSET {
        let Some(e) = parse_dirent(&buf, off) else {
            let remaining = DIR_TAIL_OFFSET - off;
            bad(&mut v, off, FindingCode::BadDirent, RepairAction::DirBlockTruncated, format!("malformed record, {remaining} bytes dropped"));
            match prev {
                Some(p) if remaining < DIRENT_HEADER_LEN => {
                    let merged = rec_len_at(&buf, p) + remaining;
                    set_dirent_rec_len(&mut buf, p, merged as u16);
                }
                _ => write_dirent_header(&mut buf, off, 0, remaining as u16, 0, 0),
            }
            modified = true;
            break;
        };
        let rec_len = e.rec_len as usize;
        let before = v.findings.len();
        let (inode, name_len, file_type, is_dot, is_dotdot) = (e.inode, e.name_len, e.file_type, e.is_dot(), e.is_dotdot());
        let mut cleared = false;
        if inode == 0 {
            // unused slot
        } else if name_len == 0 {
            bad(&mut v, off, FindingCode::BadDirent, RepairAction::DirentCleared, "empty name".into());
            clear_record(&mut buf, prev, off);
            cleared = true;
        } else if is_dot {
            if inode != dir || file_type != FT_DIR {
                bad(&mut v, off, FindingCode::BadDirent, RepairAction::DirentRewritten, format!("'.' names {inode}"));
                set_dirent_inode(&mut buf, off, dir);
                set_dirent_file_type(&mut buf, off, FT_DIR);
            }
            v.icount_incs.push(dir);
        } else if is_dotdot {
            if v.dotdot.is_none() {
                v.dotdot = Some((off as u32, inode));
            } else {
                bad(&mut v, off, FindingCode::BadDirent, RepairAction::DirentCleared, "second '..'".into());
                clear_record(&mut buf, prev, off);
                cleared = true;
            }
        } else {
            match kind_of(inode) {
                None => {
                    bad(&mut v, off, FindingCode::DanglingDirent, RepairAction::DirentCleared, format!("names free inode {inode}"));
                    clear_record(&mut buf, prev, off);
                    cleared = true;
                }
                Some(k) => {
                    if file_type != k.dirent_type() {
                        bad(
                            &mut v,
                            off,
                            FindingCode::BadDirent,
                            RepairAction::DirentRewritten,
                            format!("file_type {file_type} for {} inode {inode}", k.name()),
                        );
                        set_dirent_file_type(&mut buf, off, k.dirent_type());
                    }
                    v.icount_incs.push(inode);
                    if k == InodeKind::Directory {
                        v.subdirs.push((off as u32, inode));
                    }
                }
            }
        }
        if v.findings.len() > before {
            modified = true;
        }
        if !cleared {
            prev = Some(off);
        }
        off += rec_len;
    }
    if modified || bad_csum {
        seal_dir_block(&mut buf);
        v.new_bytes = Some(buf);
    }
    v
}

/// Pass-2 late phase, part one: a directory may be named by only one
/// dirent. All but the lowest `(dir, block, offset)` are cleared.
pub fn resolve_extra_links(state: &mut ShadowState) -> Vec<(Finding, DirentLoc)> {
    let mut out = Vec::new();
    for (&target, locs) in state.referrers.iter_mut() {
        if locs.len() <= 1 {
            continue;
        }
        for loc in locs.drain(1..) {
            out.push((
                Finding::new(
                    FindingCode::BadDirent,
                    loc.dir,
                    loc.block,
                    loc.offset as u64,
                    RepairAction::DirentCleared,
                    format!("extra link to directory {target}"),
                ),
                loc,
            ));
            state.icount[target as usize] -= 1;
        }
    }
    out.sort();
    out
}

/// What `..` verification decided for one directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DotDotDecision {
    pub dir: u64,
    pub finding: Option<Finding>,
    /// `..` record to rewrite and its new target.
    pub rewrite: Option<(DirentLoc, u64)>,
    pub parent: Option<u64>,
    /// Inode credited with this directory's `..` link.
    pub count_for: Option<u64>,
}

/// Checks that `dir`'s `..` names the directory holding its name dirent.
/// Root's parent is root.
pub fn pass2_verify_dotdot(dir: u64, state: &ShadowState) -> Result<DotDotDecision> {
    let expected_blocks = state.dir_block_count.get(&dir).copied().unwrap_or(0);
    let scanned = state.dir_blocks_scanned.get(&dir).copied().unwrap_or(0);
    if scanned < expected_blocks {
        return Err(Error::MissingParentRecord(dir));
    }
    let parent = if dir == ROOT_INODE {
        Some(ROOT_INODE)
    } else {
        state.referrers.get(&dir).and_then(|l| l.first()).map(|l| l.dir)
    };
    let mut d = DotDotDecision { dir, finding: None, rewrite: None, parent, count_for: None };
    let Some(rec) = state.dotdot.get(&dir).copied() else {
        return Ok(d);
    };
    match parent {
        Some(p) if rec.target != p => {
            d.finding = Some(Finding::new(
                FindingCode::DotDotMismatch,
                dir,
                rec.block,
                rec.offset as u64,
                RepairAction::DotDotRewritten,
                format!("'..' names {}, parent is {p}", rec.target),
            ));
            d.rewrite = Some((rec, p));
            d.count_for = Some(p);
        }
        Some(p) => d.count_for = Some(p),
        None => d.count_for = state.kind(rec.target).map(|_| rec.target),
    }
    Ok(d)
}

/// `..` decisions for every directory, ascending.
pub fn verify_directories(state: &ShadowState) -> Result<Vec<DotDotDecision>> {
    state.directories().map(|d| pass2_verify_dotdot(d, state)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{DirEntryBlock, FT_REGULAR};

    fn kinds(ino: u64) -> Option<InodeKind> {
        match ino {
            2 | 5 => Some(InodeKind::Directory),
            6 | 7 => Some(InodeKind::Regular),
            _ => None,
        }
    }

    fn block(items: &[(u64, u8, &[u8])]) -> Vec<u8> {
        DirEntryBlock::pack(items).unwrap().encode().to_vec()
    }

    #[test]
    fn pristine_block_counts_live_entries() {
        let b = block(&[(5, FT_DIR, b"."), (2, FT_DIR, b".."), (6, FT_REGULAR, b"a"), (7, FT_REGULAR, b"b")]);
        let v = check_dir_block(5, 100, &b, kinds);
        assert!(v.findings.is_empty());
        assert_eq!(v.icount_incs, vec![5, 6, 7]);
        assert_eq!(v.dotdot, Some((16, 2)));
        assert!(v.new_bytes.is_none());
    }

    #[test]
    fn dangling_entry_merges_into_previous() {
        let b = block(&[(5, FT_DIR, b"."), (2, FT_DIR, b".."), (999, FT_REGULAR, b"gone"), (7, FT_REGULAR, b"b")]);
        let v = check_dir_block(5, 100, &b, kinds);
        assert_eq!(v.findings.len(), 1);
        assert_eq!(v.findings[0].code, FindingCode::DanglingDirent);
        assert_eq!(v.findings[0].offset, 32);
        let nb = v.new_bytes.unwrap();
        let names: Vec<Vec<u8>> = DirEntryBlock::decode(&nb).unwrap().entries.into_iter().map(|e| e.name).collect();
        assert_eq!(names, vec![b".".to_vec(), b"..".to_vec(), b"b".to_vec()]);
        let again = check_dir_block(5, 100, &nb, kinds);
        assert!(again.findings.is_empty());
    }

    #[test]
    fn bad_tail_is_rewritten_without_other_findings() {
        let mut b = block(&[(5, FT_DIR, b"."), (2, FT_DIR, b"..")]);
        b[DIR_TAIL_OFFSET + 5] ^= 0xff;
        let v = check_dir_block(5, 100, &b, kinds);
        assert_eq!(v.findings.len(), 1);
        assert_eq!(v.findings[0].code, FindingCode::BadDirChecksum);
        assert!(check_dir_block(5, 100, v.new_bytes.as_ref().unwrap(), kinds).findings.is_empty());
    }

    #[test]
    fn malformed_record_truncates_block() {
        let mut b = block(&[(5, FT_DIR, b"."), (2, FT_DIR, b".."), (6, FT_REGULAR, b"a"), (7, FT_REGULAR, b"b")]);
        set_dirent_rec_len(&mut b, 32, 18);
        seal_dir_block(&mut b);
        let v = check_dir_block(5, 100, &b, kinds);
        assert_eq!(v.findings.len(), 1);
        assert_eq!(v.findings[0].code, FindingCode::BadDirent);
        assert_eq!(v.findings[0].repair, RepairAction::DirBlockTruncated);
        assert_eq!(v.icount_incs, vec![5]);
        assert!(check_dir_block(5, 100, v.new_bytes.as_ref().unwrap(), kinds).findings.is_empty());
    }
}
