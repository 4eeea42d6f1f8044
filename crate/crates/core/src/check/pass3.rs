//! Reachability of every directory from the root.

use rustc_hash::FxHashSet;

use crate::error::Result;
use crate::format::{FT_DIR, LOST_FOUND_INODE, ROOT_INODE};
use crate::image::Image;

use super::repair::{clear_dirent_at, link_into_dir, set_parent};
use super::shadow::ShadowState;
use super::{Finding, FindingCode, RepairAction};

/// Name used for a reconnected inode.
pub fn orphan_name(ino: u64) -> Vec<u8> {
    if ino == LOST_FOUND_INODE {
        b"lost+found".to_vec()
    } else {
        format!("#{ino}").into_bytes()
    }
}

/// Links directory `dir` back under `lost+found` (root for `lost+found`
/// itself) and points its `..` there.
fn reconnect_dir(state: &mut ShadowState, image: &mut Image, dir: u64) -> Result<bool> {
    let dest = if dir == LOST_FOUND_INODE { ROOT_INODE } else { LOST_FOUND_INODE };
    match link_into_dir(state, image, dest, &orphan_name(dir), dir, FT_DIR)? {
        Some(loc) => {
            state.icount[dir as usize] += 1;
            state.referrers.insert(dir, vec![loc]);
            set_parent(state, image, dir, dest)?;
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Walks `parent_map` from each directory. A chain that ends without
/// reaching the root has its top directory reconnected; a chain that loops
/// has every directory of the loop reconnected, with the dirent that
/// linked it inside the loop removed.
pub fn pass3_connectivity(state: &mut ShadowState, image: &mut Image) -> Result<Vec<Finding>> {
    let mut findings = Vec::new();
    let dirs: Vec<u64> = state.directories().collect();
    let mut reachable: FxHashSet<u64> = FxHashSet::default();
    reachable.insert(ROOT_INODE);
    for &d in &dirs {
        state.stats.objects_checked[2] += 1;
        let mut path: Vec<u64> = Vec::new();
        let mut cur = d;
        loop {
            if reachable.contains(&cur) {
                break;
            }
            if let Some(i) = path.iter().position(|&p| p == cur) {
                let mut cycle = path[i..].to_vec();
                cycle.sort_unstable();
                for &x in &cycle {
                    if let Some(loc) = state.referrers.get(&x).and_then(|l| l.first()).copied() {
                        if clear_dirent_at(image, loc.block, loc.offset)? {
                            state.icount[x as usize] -= 1;
                        }
                        state.referrers.remove(&x);
                    }
                }
                for &x in &cycle {
                    let ok = reconnect_dir(state, image, x)?;
                    findings.push(Finding::new(
                        FindingCode::UnreachableDirectory,
                        x,
                        0,
                        0,
                        if ok { RepairAction::ReconnectedToLostFound } else { RepairAction::NotRepaired },
                        format!("directory cycle through {}", cycle.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")),
                    ));
                }
                break;
            }
            path.push(cur);
            match state.parent_map.get(&cur).copied() {
                Some(p) if state.is_dir(p) => cur = p,
                _ => {
                    let ok = reconnect_dir(state, image, cur)?;
                    findings.push(Finding::new(
                        FindingCode::UnreachableDirectory,
                        cur,
                        0,
                        0,
                        if ok { RepairAction::ReconnectedToLostFound } else { RepairAction::NotRepaired },
                        "no path to root",
                    ));
                    break;
                }
            }
        }
        reachable.extend(path);
    }
    Ok(findings)
}
