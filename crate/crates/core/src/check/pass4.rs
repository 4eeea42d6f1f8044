//! Link counts.

use crate::error::Result;
use crate::format::{Inode, InodeKind, LOST_FOUND_INODE, ROOT_INODE};
use crate::image::Image;

use super::pass3::orphan_name;
use super::repair::{link_into_dir, set_parent};
use super::shadow::ShadowState;
use super::{Finding, FindingCode, RepairAction};

/// Reconnects in-use inodes nothing refers to, then rewrites every
/// `links_count` that disagrees with the counted references.
pub fn pass4_refcounts(state: &mut ShadowState, image: &mut Image) -> Result<Vec<Finding>> {
    let mut findings = Vec::new();
    let geo = state.geometry;
    let in_use: Vec<u64> = state.in_use_inodes().collect();
    for &ino in &in_use {
        if ino == ROOT_INODE || ino == LOST_FOUND_INODE || state.icount[ino as usize] != 0 {
            continue;
        }
        let kind = state.kind(ino).expect("in use");
        let linked = link_into_dir(state, image, LOST_FOUND_INODE, &orphan_name(ino), ino, kind.dirent_type())?;
        if let Some(loc) = linked {
            state.icount[ino as usize] += 1;
            if kind == InodeKind::Directory {
                state.referrers.insert(ino, vec![loc]);
                set_parent(state, image, ino, LOST_FOUND_INODE)?;
            }
        }
        findings.push(Finding::new(
            FindingCode::ZeroLinkInUse,
            ino,
            0,
            0,
            if linked.is_some() { RepairAction::ReconnectedToLostFound } else { RepairAction::NotRepaired },
            format!("{} with no references", kind.name()),
        ));
    }
    for &ino in &in_use {
        state.stats.objects_checked[3] += 1;
        let mut inode = Inode::decode(image.inode_bytes(&geo, ino)?);
        let want = state.icount[ino as usize].min(u16::MAX as u32) as u16;
        if inode.links_count != want {
            findings.push(Finding::new(
                FindingCode::WrongLinksCount,
                ino,
                0,
                0,
                RepairAction::LinksCountRewritten,
                format!("links_count {} counted {want}", inode.links_count),
            ));
            inode.links_count = want;
            inode.seal();
            image.write_inode_bytes(&geo, ino, &inode.encode())?;
        }
    }
    Ok(findings)
}
