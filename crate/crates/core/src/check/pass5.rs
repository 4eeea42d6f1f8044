//! Bitmaps and free counts.

use crate::error::Result;
use crate::format::Superblock;
use crate::image::Image;

use super::shadow::ShadowState;
use super::{Finding, FindingCode, Patch, RepairAction};

fn bit_detail(on_disk: bool) -> String {
    format!("on-disk {} computed {}", on_disk as u8, !on_disk as u8)
}

/// Block-bitmap differences for blocks `[start, end)`.
pub fn pass5_block_range(state: &ShadowState, image: &Image, start: u64, end: u64) -> Result<Vec<(Finding, Patch)>> {
    let geo = &state.geometry;
    let mut out = Vec::new();
    for b in start..end {
        let want = b < geo.first_data_block || state.claimed_blocks.get(b);
        let (blk, bit) = geo.block_bit(b);
        let have = image.bit(blk, bit)?;
        if have != want {
            out.push((
                Finding::new(FindingCode::BlockBitmapMismatch, 0, b, 0, RepairAction::BitmapBitRewritten, bit_detail(have)),
                Patch::Bit { block: blk, bit, value: want },
            ));
        }
    }
    Ok(out)
}

/// Inode-bitmap differences for inodes `[start, end)`.
pub fn pass5_inode_range(state: &ShadowState, image: &Image, start: u64, end: u64) -> Result<Vec<(Finding, Patch)>> {
    let geo = &state.geometry;
    let mut out = Vec::new();
    for i in start..end {
        let want = i < 2 || state.claimed_inodes.get(i);
        let (blk, bit) = geo.inode_bit(i);
        let have = image.bit(blk, bit)?;
        if have != want {
            out.push((
                Finding::new(FindingCode::InodeBitmapMismatch, i, 0, 0, RepairAction::BitmapBitRewritten, bit_detail(have)),
                Patch::Bit { block: blk, bit, value: want },
            ));
        }
    }
    Ok(out)
}

/// Compares superblock free counts with the computed bitmaps. Returns the
/// findings and the corrected superblock when anything differs.
pub fn pass5_free_counts(state: &ShadowState, image: &Image) -> Result<Option<(Vec<Finding>, Superblock)>> {
    let geo = &state.geometry;
    let used_blocks = geo.first_data_block + state.claimed_blocks.count_ones();
    let used_inodes = 2 + state.claimed_inodes.count_ones();
    let free_blocks = geo.total_blocks - used_blocks;
    let free_inodes = geo.total_inodes - used_inodes;
    let mut sb = image.superblock()?;
    let mut findings = Vec::new();
    if sb.free_blocks != free_blocks {
        findings.push(Finding::new(
            FindingCode::FreeCountMismatch,
            0,
            0,
            0,
            RepairAction::FreeCountRewritten,
            format!("free_blocks {} computed {free_blocks}", sb.free_blocks),
        ));
        sb.free_blocks = free_blocks;
    }
    if sb.free_inodes != free_inodes {
        findings.push(Finding::new(
            FindingCode::FreeCountMismatch,
            0,
            0,
            1,
            RepairAction::FreeCountRewritten,
            format!("free_inodes {} computed {free_inodes}", sb.free_inodes),
        ));
        sb.free_inodes = free_inodes;
    }
    if findings.is_empty() {
        return Ok(None);
    }
    sb.seal();
    Ok(Some((findings, sb)))
}

/// Whole-image pass 5, applied in place.
pub fn pass5_bitmaps(state: &mut ShadowState, image: &mut Image) -> Result<Vec<Finding>> {
    let geo = state.geometry;
    state.stats.objects_checked[4] += geo.total_blocks + geo.total_inodes;
    let mut pairs = pass5_block_range(state, image, 0, geo.total_blocks)?;
    pairs.extend(pass5_inode_range(state, image, 0, geo.total_inodes)?);
    let mut findings = Vec::with_capacity(pairs.len());
    for (f, p) in pairs {
        p.apply(image)?;
        findings.push(f);
    }
    if let Some((f, sb)) = pass5_free_counts(state, image)? {
        image.write_superblock(&sb)?;
        findings.extend(f);
    }
    Ok(findings)
}
