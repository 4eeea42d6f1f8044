//! Image edits shared by the late passes: dirent removal and rewrite,
//! linking into a directory, and `..` reparenting.

use crate::error::Result;
use crate::format::{
    iterate_dirents, min_rec_len, seal_dir_block, set_dirent_file_type, set_dirent_inode, set_dirent_rec_len,
    write_dirent_header, DirEntryBlock, DirentItem, Inode, BLOCK_SIZE, DIRECT_POINTERS, DIRENT_HEADER_LEN, FT_DIR,
};
use crate::image::Image;

use super::pass2::clear_record;
use super::shadow::{DirBlockRef, DirentLoc, ShadowState};

/// Removes the dirent at `offset` the same way pass 2 does. Returns false
/// if no record starts there.
pub fn clear_dirent_at(image: &mut Image, block: u64, offset: u32) -> Result<bool> {
    let buf = image.block_mut(block)?;
    let mut prev = None;
    let mut found = false;
    for item in iterate_dirents(buf) {
        match item {
            DirentItem::Entry { offset: off, .. } if off == offset as usize => {
                found = true;
                break;
            }
            DirentItem::Entry { offset: off, .. } => prev = Some(off),
            DirentItem::Malformed { .. } => break,
        }
    }
    if found {
        clear_record(buf, prev, offset as usize);
        seal_dir_block(buf);
    }
    Ok(found)
}

pub fn set_dirent_target(image: &mut Image, block: u64, offset: u32, target: u64, file_type: u8) -> Result<()> {
    let buf = image.block_mut(block)?;
    set_dirent_inode(buf, offset as usize, target);
    set_dirent_file_type(buf, offset as usize, file_type);
    seal_dir_block(buf);
    Ok(())
}

/// Places a new record in an existing well-formed block: an unused record
/// large enough, or slack at the end of a live one.
fn insert_into_block(buf: &mut [u8], name: &[u8], target: u64, file_type: u8) -> Option<u32> {
    let need = min_rec_len(name.len());
    let mut spot = None;
    for item in iterate_dirents(buf) {
        match item {
            DirentItem::Malformed { .. } => return None,
            DirentItem::Entry { offset, entry } => {
                let rec = entry.rec_len as usize;
                if entry.inode == 0 {
                    if rec >= need {
                        spot = Some((offset, None, rec));
                        break;
                    }
                } else {
                    let used = min_rec_len(entry.name_len as usize);
                    if rec - used >= need {
                        spot = Some((offset + used, Some((offset, used)), rec - used));
                        break;
                    }
                }
            }
        }
    }
    let (at, shrink, rec) = spot?;
    if let Some((off, used)) = shrink {
        set_dirent_rec_len(buf, off, used as u16);
    }
    write_dirent_header(buf, at, target, rec as u16, name.len() as u8, file_type);
    buf[at + DIRENT_HEADER_LEN..at + DIRENT_HEADER_LEN + name.len()].copy_from_slice(name);
    seal_dir_block(buf);
    Some(at as u32)
}

/// Adds `name → target` to directory `dir`, growing it by one block when
/// every existing block is full. The new block is the lowest one free in
/// both the computed and on-disk bitmaps; both are updated, as is the
/// superblock free count. Returns `None` when no room can be made.
pub fn link_into_dir(
    state: &mut ShadowState,
    image: &mut Image,
    dir: u64,
    name: &[u8],
    target: u64,
    file_type: u8,
) -> Result<Option<DirentLoc>> {
    if !state.is_dir(dir) {
        return Ok(None);
    }
    let start = state.db_list.partition_point(|r| r.dir < dir);
    let end = state.db_list.partition_point(|r| r.dir <= dir);
    let blocks: Vec<u64> = state.db_list[start..end].iter().map(|r| r.block).collect();
    for block in blocks {
        if let Some(offset) = insert_into_block(image.block_mut(block)?, name, target, file_type) {
            return Ok(Some(DirentLoc { dir, block, offset, target }));
        }
    }

    let geo = state.geometry;
    let mut inode = Inode::decode(image.inode_bytes(&geo, dir)?);
    let Some(slot) = inode.direct.iter().position(|&p| p == 0) else {
        return Ok(None);
    };
    debug_assert!(slot < DIRECT_POINTERS);
    let mut free = None;
    for b in geo.first_data_block..geo.total_blocks {
        let (bb, bit) = geo.block_bit(b);
        if !state.claimed_blocks.get(b) && !image.bit(bb, bit)? {
            free = Some(b);
            break;
        }
    }
    let Some(block) = free else {
        return Ok(None);
    };
    let Some(packed) = DirEntryBlock::pack(&[(target, file_type, name)]) else {
        return Ok(None);
    };
    image.write_block(block, &packed.encode()[..])?;
    let (bb, bit) = geo.block_bit(block);
    image.set_bit(bb, bit, true)?;
    let mut sb = image.superblock()?;
    sb.free_blocks = sb.free_blocks.saturating_sub(1);
    sb.seal();
    image.write_superblock(&sb)?;
    inode.direct[slot] = block;
    inode.size = inode.size.max((slot as u64 + 1) * BLOCK_SIZE as u64);
    inode.seal();
    image.write_inode_bytes(&geo, dir, &inode.encode())?;

    state.claimed_blocks.set(block);
    let r = DirBlockRef { dir, block, logical: slot as u32 };
    let pos = state.db_list.partition_point(|x| *x < r);
    state.db_list.insert(pos, r);
    *state.dir_block_count.entry(dir).or_insert(0) += 1;
    *state.dir_blocks_scanned.entry(dir).or_insert(0) += 1;
    Ok(Some(DirentLoc { dir, block, offset: 0, target }))
}

/// Points `dir`'s `..` at `parent` and moves the `..` link credit.
pub fn set_parent(state: &mut ShadowState, image: &mut Image, dir: u64, parent: u64) -> Result<()> {
    state.parent_map.insert(dir, parent);
    let Some(rec) = state.dotdot.get_mut(&dir) else {
        return Ok(());
    };
    if rec.target != parent {
        set_dirent_target(image, rec.block, rec.offset, parent, FT_DIR)?;
        rec.target = parent;
    }
    let old = state.dotdot_counted.insert(dir, parent);
    if old != Some(parent) {
        if let Some(o) = old {
            state.icount[o as usize] -= 1;
        }
        state.icount[parent as usize] += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{DirEntryBlock, FT_REGULAR};

    #[test]
    fn insert_uses_slack_of_last_record() {
        let mut b = DirEntryBlock::pack(&[(3, FT_DIR, b"."), (2, FT_DIR, b"..")]).unwrap().encode().to_vec();
        let at = insert_into_block(&mut b, b"#42", 42, FT_REGULAR).unwrap();
        assert_eq!(at, 32);
        let d = DirEntryBlock::decode(&b).unwrap();
        assert_eq!(d.entries.len(), 3);
        assert_eq!(d.entries[2].inode, 42);
    }

    #[test]
    fn full_block_rejects_insert() {
        let name = [b'x'; 240];
        let mut items: Vec<(u64, u8, &[u8])> = (0..16).map(|i| (i + 4, FT_REGULAR, &name[..])).collect();
        items.push((30, FT_REGULAR, &name[..40]));
        let mut b = DirEntryBlock::pack(&items).unwrap().encode().to_vec();
        assert!(insert_into_block(&mut b, b"#99", 99, FT_REGULAR).is_none());
    }
}
