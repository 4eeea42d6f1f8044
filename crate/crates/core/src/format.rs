//! On-disk layout of an SFS image.
//!
//! ```text
//! block 0                      superblock (first 100 bytes, rest zero)
//! block_bitmap_start ..        one bit per block, LSB-first within a byte
//! inode_bitmap_start ..        one bit per inode, LSB-first within a byte
//! inode_table_start ..         128-byte inodes, 32 per block, inode 0 first
//! first_data_block ..          directory, indirect and file data blocks
//! ```
//!
//! Every integer is little-endian. All checksums are CRC32C.

use crate::crc32c::{crc32c, crc32c_with_zeroed};
use crate::error::{Error, Result};

pub const BLOCK_SIZE: usize = 4096;
pub const INODE_SIZE: usize = 128;
pub const INODES_PER_BLOCK: u64 = (BLOCK_SIZE / INODE_SIZE) as u64;
pub const BITS_PER_BLOCK: u64 = (BLOCK_SIZE * 8) as u64;

pub const SB_MAGIC: u32 = 0x5346_5331;
pub const SB_VERSION: u32 = 1;
pub const SUPERBLOCK_LEN: usize = 100;
const SB_CHECKSUM_OFFSET: usize = 96;

pub const ROOT_INODE: u64 = 2;
pub const LOST_FOUND_INODE: u64 = 3;
pub const FIRST_USER_INODE: u64 = 4;

pub const DIRECT_POINTERS: usize = 10;
pub const POINTERS_PER_BLOCK: usize = BLOCK_SIZE / 8;
pub const MAX_FILE_BLOCKS: u64 = (DIRECT_POINTERS + POINTERS_PER_BLOCK) as u64;
pub const INLINE_SYMLINK_MAX: u64 = (DIRECT_POINTERS * 8) as u64;

/// Claim slot of the indirect pointer block itself; entry `j` of the
/// indirect block is slot `INDIRECT_SLOT + 1 + j`.
pub const INDIRECT_SLOT: u32 = DIRECT_POINTERS as u32;

const INODE_CHECKSUM_OFFSET: usize = 112;

pub const DIR_TAIL_OFFSET: usize = BLOCK_SIZE - 8;
pub const DIR_TAIL_MAGIC: u32 = 0x4442_4C4B;
pub const DIRENT_HEADER_LEN: usize = 12;

pub const FT_REGULAR: u8 = 1;
pub const FT_DIR: u8 = 2;
pub const FT_SYMLINK: u8 = 7;

pub const MODE_DIR: u16 = 0x4;
pub const MODE_REGULAR: u16 = 0x8;
pub const MODE_SYMLINK: u16 = 0xA;

#[inline]
fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

#[inline]
fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

#[inline]
fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Region placement shared by the builder and the checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub total_blocks: u64,
    pub total_inodes: u64,
    pub block_bitmap_start: u64,
    pub block_bitmap_blocks: u32,
    pub inode_bitmap_start: u64,
    pub inode_bitmap_blocks: u32,
    pub inode_table_start: u64,
    pub inode_table_blocks: u32,
    pub first_data_block: u64,
}

impl Geometry {
    /// Packs the metadata regions back to back after the superblock.
    pub fn compute(total_blocks: u64, total_inodes: u64) -> Result<Geometry> {
        if total_inodes < 3 {
            return Err(Error::SpecInfeasible(format!(
                "total_inodes {total_inodes} < 3"
            )));
        }
        let block_bitmap_blocks = ceil_div(total_blocks, BITS_PER_BLOCK);
        let inode_bitmap_blocks = ceil_div(total_inodes, BITS_PER_BLOCK);
        let inode_table_blocks = ceil_div(total_inodes, INODES_PER_BLOCK);
        let block_bitmap_start = 1;
        let inode_bitmap_start = block_bitmap_start + block_bitmap_blocks;
        let inode_table_start = inode_bitmap_start + inode_bitmap_blocks;
        let first_data_block = inode_table_start + inode_table_blocks;
        if first_data_block > total_blocks {
            return Err(Error::SpecInfeasible(format!(
                "metadata needs {first_data_block} blocks, image has {total_blocks}"
            )));
        }
        let to_u32 = |v: u64| {
            u32::try_from(v).map_err(|_| Error::SpecInfeasible("region too large".into()))
        };
        Ok(Geometry {
            total_blocks,
            total_inodes,
            block_bitmap_start,
            block_bitmap_blocks: to_u32(block_bitmap_blocks)?,
            inode_bitmap_start,
            inode_bitmap_blocks: to_u32(inode_bitmap_blocks)?,
            inode_table_start,
            inode_table_blocks: to_u32(inode_table_blocks)?,
            first_data_block,
        })
    }

    /// Block holding `ino` and the byte offset of the inode inside it.
    #[inline]
    pub fn inode_location(&self, ino: u64) -> (u64, usize) {
        (
            self.inode_table_start + ino / INODES_PER_BLOCK,
            (ino % INODES_PER_BLOCK) as usize * INODE_SIZE,
        )
    }

    #[inline]
    pub fn is_data_block(&self, block: u64) -> bool {
        block >= self.first_data_block && block < self.total_blocks
    }

    #[inline]
    pub fn data_blocks(&self) -> u64 {
        self.total_blocks - self.first_data_block
    }

    /// Block and bit index of `block`'s bit in the block bitmap.
    #[inline]
    pub fn block_bit(&self, block: u64) -> (u64, u32) {
        (
            self.block_bitmap_start + block / BITS_PER_BLOCK,
            (block % BITS_PER_BLOCK) as u32,
        )
    }

    #[inline]
    pub fn inode_bit(&self, ino: u64) -> (u64, u32) {
        (
            self.inode_bitmap_start + ino / BITS_PER_BLOCK,
            (ino % BITS_PER_BLOCK) as u32,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Superblock {
    pub magic: u32,
    pub version: u32,
    pub block_size: u32,
    pub total_blocks: u64,
    pub total_inodes: u64,
    pub free_blocks: u64,
    pub free_inodes: u64,
    pub block_bitmap_start: u64,
    pub block_bitmap_blocks: u32,
    pub inode_bitmap_start: u64,
    pub inode_bitmap_blocks: u32,
    pub inode_table_start: u64,
    pub inode_table_blocks: u32,
    pub root_inode: u64,
    pub first_data_block: u64,
    pub checksum: u32,
}

impl Superblock {
    pub fn new(geo: &Geometry, free_blocks: u64, free_inodes: u64) -> Superblock {
        let mut sb = Superblock {
            magic: SB_MAGIC,
            version: SB_VERSION,
            block_size: BLOCK_SIZE as u32,
            total_blocks: geo.total_blocks,
            total_inodes: geo.total_inodes,
            free_blocks,
            free_inodes,
            block_bitmap_start: geo.block_bitmap_start,
            block_bitmap_blocks: geo.block_bitmap_blocks,
            inode_bitmap_start: geo.inode_bitmap_start,
            inode_bitmap_blocks: geo.inode_bitmap_blocks,
            inode_table_start: geo.inode_table_start,
            inode_table_blocks: geo.inode_table_blocks,
            root_inode: ROOT_INODE,
            first_data_block: geo.first_data_block,
            checksum: 0,
        };
        sb.seal();
        sb
    }

    pub fn encode(&self) -> [u8; SUPERBLOCK_LEN] {
        let mut b = [0u8; SUPERBLOCK_LEN];
        b[0..4].copy_from_slice(&self.magic.to_le_bytes());
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..12].copy_from_slice(&self.block_size.to_le_bytes());
        b[12..20].copy_from_slice(&self.total_blocks.to_le_bytes());
        b[20..28].copy_from_slice(&self.total_inodes.to_le_bytes());
        b[28..36].copy_from_slice(&self.free_blocks.to_le_bytes());
        b[36..44].copy_from_slice(&self.free_inodes.to_le_bytes());
        b[44..52].copy_from_slice(&self.block_bitmap_start.to_le_bytes());
        b[52..56].copy_from_slice(&self.block_bitmap_blocks.to_le_bytes());
        b[56..64].copy_from_slice(&self.inode_bitmap_start.to_le_bytes());
        b[64..68].copy_from_slice(&self.inode_bitmap_blocks.to_le_bytes());
        b[68..76].copy_from_slice(&self.inode_table_start.to_le_bytes());
        b[76..80].copy_from_slice(&self.inode_table_blocks.to_le_bytes());
        b[80..88].copy_from_slice(&self.root_inode.to_le_bytes());
        b[88..96].copy_from_slice(&self.first_data_block.to_le_bytes());
        b[96..100].copy_from_slice(&self.checksum.to_le_bytes());
        b
    }

    /// Parses the first `SUPERBLOCK_LEN` bytes without validating anything.
    pub fn decode(b: &[u8]) -> Superblock {
        Superblock {
            magic: le_u32(b, 0),
            version: le_u32(b, 4),
            block_size: le_u32(b, 8),
            total_blocks: le_u64(b, 12),
            total_inodes: le_u64(b, 20),
            free_blocks: le_u64(b, 28),
            free_inodes: le_u64(b, 36),
            block_bitmap_start: le_u64(b, 44),
            block_bitmap_blocks: le_u32(b, 52),
            inode_bitmap_start: le_u64(b, 56),
            inode_bitmap_blocks: le_u32(b, 64),
            inode_table_start: le_u64(b, 68),
            inode_table_blocks: le_u32(b, 76),
            root_inode: le_u64(b, 80),
            first_data_block: le_u64(b, 88),
            checksum: le_u32(b, 96),
        }
    }

    pub fn compute_checksum(&self) -> u32 {
        let bytes = self.encode();
        crc32c_with_zeroed(&bytes, SB_CHECKSUM_OFFSET)
    }

    pub fn seal(&mut self) {
        self.checksum = self.compute_checksum();
    }

    /// Decodes block 0 and checks every superblock invariant.
    pub fn parse_verified(block0: &[u8]) -> Result<Superblock> {
        if block0.len() < SUPERBLOCK_LEN {
            return Err(Error::UnrecognizedImage("superblock truncated".into()));
        }
        let sb = Superblock::decode(block0);
        if sb.magic != SB_MAGIC {
            return Err(Error::UnrecognizedImage(format!("bad magic {:#010x}", sb.magic)));
        }
        let want = crc32c_with_zeroed(&block0[..SUPERBLOCK_LEN], SB_CHECKSUM_OFFSET);
        if sb.checksum != want {
            return Err(Error::UnrecognizedImage(format!(
                "superblock checksum {:#010x}, computed {want:#010x}",
                sb.checksum
            )));
        }
        if sb.block_size as usize != BLOCK_SIZE {
            return Err(Error::UnrecognizedImage(format!("block size {}", sb.block_size)));
        }
        if sb.root_inode != ROOT_INODE {
            return Err(Error::UnrecognizedImage(format!("root inode {}", sb.root_inode)));
        }
        let geo = Geometry::compute(sb.total_blocks, sb.total_inodes)
            .map_err(|e| Error::UnrecognizedImage(e.to_string()))?;
        if sb.geometry() != geo {
            return Err(Error::UnrecognizedImage("region layout is not the canonical packing".into()));
        }
        Ok(sb)
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            total_blocks: self.total_blocks,
            total_inodes: self.total_inodes,
            block_bitmap_start: self.block_bitmap_start,
            block_bitmap_blocks: self.block_bitmap_blocks,
            inode_bitmap_start: self.inode_bitmap_start,
            inode_bitmap_blocks: self.inode_bitmap_blocks,
            inode_table_start: self.inode_table_start,
            inode_table_blocks: self.inode_table_blocks,
            first_data_block: self.first_data_block,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InodeKind {
    Directory,
    Regular,
    Symlink,
}

impl InodeKind {
    pub fn from_mode(mode: u16) -> Option<InodeKind> {
        match mode >> 12 {
            MODE_DIR => Some(InodeKind::Directory),
            MODE_REGULAR => Some(InodeKind::Regular),
            MODE_SYMLINK => Some(InodeKind::Symlink),
            _ => None,
        }
    }

    pub fn mode_bits(self) -> u16 {
        match self {
            InodeKind::Directory => MODE_DIR << 12,
            InodeKind::Regular => MODE_REGULAR << 12,
            InodeKind::Symlink => MODE_SYMLINK << 12,
        }
    }

    pub fn dirent_type(self) -> u8 {
        match self {
            InodeKind::Directory => FT_DIR,
            InodeKind::Regular => FT_REGULAR,
            InodeKind::Symlink => FT_SYMLINK,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InodeKind::Directory => "dir",
            InodeKind::Regular => "file",
            InodeKind::Symlink => "symlink",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Inode {
    pub mode: u16,
    pub links_count: u16,
    pub flags: u32,
    pub size: u64,
    pub mtime: u64,
    pub direct: [u64; DIRECT_POINTERS],
    pub indirect: u64,
    pub checksum: u32,
    pub reserved: u32,
    pub padding: u64,
}

impl Inode {
    pub fn encode(&self) -> [u8; INODE_SIZE] {
        let mut b = [0u8; INODE_SIZE];
        b[0..2].copy_from_slice(&self.mode.to_le_bytes());
        b[2..4].copy_from_slice(&self.links_count.to_le_bytes());
        b[4..8].copy_from_slice(&self.flags.to_le_bytes());
        b[8..16].copy_from_slice(&self.size.to_le_bytes());
        b[16..24].copy_from_slice(&self.mtime.to_le_bytes());
        for (i, p) in self.direct.iter().enumerate() {
            b[24 + i * 8..32 + i * 8].copy_from_slice(&p.to_le_bytes());
        }
        b[104..112].copy_from_slice(&self.indirect.to_le_bytes());
        b[112..116].copy_from_slice(&self.checksum.to_le_bytes());
        b[116..120].copy_from_slice(&self.reserved.to_le_bytes());
        b[120..128].copy_from_slice(&self.padding.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Inode {
        let mut direct = [0u64; DIRECT_POINTERS];
        for (i, p) in direct.iter_mut().enumerate() {
            *p = le_u64(b, 24 + i * 8);
        }
        Inode {
            mode: le_u16(b, 0),
            links_count: le_u16(b, 2),
            flags: le_u32(b, 4),
            size: le_u64(b, 8),
            mtime: le_u64(b, 16),
            direct,
            indirect: le_u64(b, 104),
            checksum: le_u32(b, 112),
            reserved: le_u32(b, 116),
            padding: le_u64(b, 120),
        }
    }

    pub fn kind(&self) -> Option<InodeKind> {
        InodeKind::from_mode(self.mode)
    }

    /// Mode zero marks a free slot.
    pub fn in_use(&self) -> bool {
        self.mode != 0
    }

    /// Symlink whose target lives in the direct-pointer bytes.
    pub fn is_inline_symlink(&self) -> bool {
        self.kind() == Some(InodeKind::Symlink) && self.size <= INLINE_SYMLINK_MAX
    }

    pub fn compute_checksum(&self) -> u32 {
        crc32c_with_zeroed(&self.encode(), INODE_CHECKSUM_OFFSET)
    }

    pub fn seal(&mut self) {
        self.checksum = self.compute_checksum();
    }
}

/// Checksum stored in a raw inode vs. the one its bytes produce.
pub fn inode_checksums(raw: &[u8]) -> (u32, u32) {
    (le_u32(raw, INODE_CHECKSUM_OFFSET), crc32c_with_zeroed(&raw[..INODE_SIZE], INODE_CHECKSUM_OFFSET))
}

#[inline]
pub fn pointer_at(block: &[u8], index: usize) -> u64 {
    le_u64(block, index * 8)
}

#[inline]
pub fn align4(n: usize) -> usize {
    (n + 3) & !3
}

#[inline]
pub fn min_rec_len(name_len: usize) -> usize {
    align4(DIRENT_HEADER_LEN + name_len)
}

/// One directory entry header plus its name, borrowed from a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirentRef<'a> {
    pub inode: u64,
    pub rec_len: u16,
    pub name_len: u8,
    pub file_type: u8,
    pub name: &'a [u8],
}

impl DirentRef<'_> {
    pub fn is_dot(&self) -> bool {
        self.name == b"."
    }

    pub fn is_dotdot(&self) -> bool {
        self.name == b".."
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirentItem<'a> {
    Entry { offset: usize, entry: DirentRef<'a> },
    /// The record at `offset` breaks the tiling rules; iteration stops.
    Malformed { offset: usize },
}

/// Validates the record header at `offset`; returns `None` when it breaks
/// the tiling rules.
pub fn parse_dirent(block: &[u8], offset: usize) -> Option<DirentRef<'_>> {
    if !offset.is_multiple_of(4) || offset + DIRENT_HEADER_LEN > DIR_TAIL_OFFSET {
        return None;
    }
    let rec_len = le_u16(block, offset + 8);
    let name_len = block[offset + 10];
    let r = rec_len as usize;
    if r < DIRENT_HEADER_LEN || !r.is_multiple_of(4) || offset + r > DIR_TAIL_OFFSET || r < min_rec_len(name_len as usize) {
        return None;
    }
    Some(DirentRef {
        inode: le_u64(block, offset),
        rec_len,
        name_len,
        file_type: block[offset + 11],
        name: &block[offset + DIRENT_HEADER_LEN..offset + DIRENT_HEADER_LEN + name_len as usize],
    })
}

/// Walks the records of a directory block.
pub fn iterate_dirents(block: &[u8]) -> DirentIter<'_> {
    DirentIter { block, offset: 0, done: false }
}

pub struct DirentIter<'a> {
    block: &'a [u8],
    offset: usize,
    done: bool,
}

impl<'a> Iterator for DirentIter<'a> {
    type Item = DirentItem<'a>;

    fn next(&mut self) -> Option<DirentItem<'a>> {
        if self.done || self.offset >= DIR_TAIL_OFFSET {
            return None;
        }
        let offset = self.offset;
        match parse_dirent(self.block, offset) {
            Some(entry) => {
                self.offset += entry.rec_len as usize;
                Some(DirentItem::Entry { offset, entry })
            }
            None => {
                self.done = true;
                Some(DirentItem::Malformed { offset })
            }
        }
    }
}

pub fn write_dirent_header(block: &mut [u8], offset: usize, inode: u64, rec_len: u16, name_len: u8, file_type: u8) {
    block[offset..offset + 8].copy_from_slice(&inode.to_le_bytes());
    block[offset + 8..offset + 10].copy_from_slice(&rec_len.to_le_bytes());
    block[offset + 10] = name_len;
    block[offset + 11] = file_type;
}

pub fn set_dirent_inode(block: &mut [u8], offset: usize, inode: u64) {
    block[offset..offset + 8].copy_from_slice(&inode.to_le_bytes());
}

pub fn set_dirent_rec_len(block: &mut [u8], offset: usize, rec_len: u16) {
    block[offset + 8..offset + 10].copy_from_slice(&rec_len.to_le_bytes());
}

pub fn set_dirent_file_type(block: &mut [u8], offset: usize, file_type: u8) {
    block[offset + 11] = file_type;
}

/// Stored and computed tail checksums plus whether the tail magic matches.
pub fn dir_block_checksums(block: &[u8]) -> (bool, u32, u32) {
    let magic_ok = le_u32(block, DIR_TAIL_OFFSET) == DIR_TAIL_MAGIC;
    (magic_ok, le_u32(block, DIR_TAIL_OFFSET + 4), crc32c(&block[..DIR_TAIL_OFFSET]))
}

pub fn seal_dir_block(block: &mut [u8]) {
    let crc = crc32c(&block[..DIR_TAIL_OFFSET]);
    block[DIR_TAIL_OFFSET..DIR_TAIL_OFFSET + 4].copy_from_slice(&DIR_TAIL_MAGIC.to_le_bytes());
    block[DIR_TAIL_OFFSET + 4..BLOCK_SIZE].copy_from_slice(&crc.to_le_bytes());
}

/// Owned directory entry used when building blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirEntry {
    pub inode: u64,
    pub rec_len: u16,
    pub file_type: u8,
    pub name: Vec<u8>,
}

/// A directory block as an ordered list of records tiling `[0, 4088)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirEntryBlock {
    pub entries: Vec<DirEntry>,
}

impl DirEntryBlock {
    /// Lays out `(inode, file_type, name)` triples compactly, stretching the
    /// last record to the tail. `None` if they do not fit.
    pub fn pack(items: &[(u64, u8, &[u8])]) -> Option<DirEntryBlock> {
        let mut entries = Vec::with_capacity(items.len());
        let mut used = 0usize;
        for &(inode, file_type, name) in items {
            if name.len() > u8::MAX as usize {
                return None;
            }
            let len = min_rec_len(name.len());
            used += len;
            entries.push(DirEntry { inode, rec_len: len as u16, file_type, name: name.to_vec() });
        }
        if used > DIR_TAIL_OFFSET {
            return None;
        }
        match entries.last_mut() {
            Some(last) => last.rec_len += (DIR_TAIL_OFFSET - used) as u16,
            None => entries.push(DirEntry {
                inode: 0,
                rec_len: DIR_TAIL_OFFSET as u16,
                file_type: 0,
                name: Vec::new(),
            }),
        }
        Some(DirEntryBlock { entries })
    }

    pub fn encode(&self) -> Box<[u8; BLOCK_SIZE]> {
        let mut b = Box::new([0u8; BLOCK_SIZE]);
        let mut off = 0usize;
        for e in &self.entries {
            write_dirent_header(&mut b[..], off, e.inode, e.rec_len, e.name.len() as u8, e.file_type);
            b[off + DIRENT_HEADER_LEN..off + DIRENT_HEADER_LEN + e.name.len()].copy_from_slice(&e.name);
            off += e.rec_len as usize;
        }
        seal_dir_block(&mut b[..]);
        b
    }

    /// Decodes a well-formed block; `None` on malformation.
    pub fn decode(block: &[u8]) -> Option<DirEntryBlock> {
        let mut entries = Vec::new();
        for item in iterate_dirents(block) {
            match item {
                DirentItem::Entry { entry, .. } => entries.push(DirEntry {
                    inode: entry.inode,
                    rec_len: entry.rec_len,
                    file_type: entry.file_type,
                    name: entry.name.to_vec(),
                }),
                DirentItem::Malformed { .. } => return None,
            }
        }
        Some(DirEntryBlock { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_packs_regions() {
        let g = Geometry::compute(1024, 256).unwrap();
        assert_eq!(g.block_bitmap_start, 1);
        assert_eq!(g.block_bitmap_blocks, 1);
        assert_eq!(g.inode_bitmap_start, 2);
        assert_eq!(g.inode_table_start, 3);
        assert_eq!(g.inode_table_blocks, 8);
        assert_eq!(g.first_data_block, 11);
        assert_eq!(g.inode_location(33), (4, 128));
    }

    #[test]
    fn superblock_seal_verifies() {
        let g = Geometry::compute(512, 64).unwrap();
        let sb = Superblock::new(&g, 10, 20);
        let mut block = vec![0u8; BLOCK_SIZE];
        block[..SUPERBLOCK_LEN].copy_from_slice(&sb.encode());
        assert_eq!(Superblock::parse_verified(&block).unwrap(), sb);
        block[30] ^= 1;
        assert!(matches!(Superblock::parse_verified(&block), Err(Error::UnrecognizedImage(_))));
    }

    #[test]
    fn one_entry_then_filler_yields_two_records() {
        let mut b = vec![0u8; BLOCK_SIZE];
        write_dirent_header(&mut b, 0, 5, 16, 1, FT_REGULAR);
        b[12] = b'a';
        write_dirent_header(&mut b, 16, 0, (DIR_TAIL_OFFSET - 16) as u16, 0, 0);
        let items: Vec<_> = iterate_dirents(&b).collect();
        assert_eq!(items.len(), 2);
        assert!(matches!(items[0], DirentItem::Entry { offset: 0, entry } if entry.name == b"a"));
        assert!(matches!(items[1], DirentItem::Entry { offset: 16, entry } if entry.inode == 0));
    }

    #[test]
    fn short_rec_len_is_malformed_at_zero() {
        let mut b = vec![0u8; BLOCK_SIZE];
        write_dirent_header(&mut b, 0, 5, 6, 1, FT_REGULAR);
        let items: Vec<_> = iterate_dirents(&b).collect();
        assert_eq!(items, vec![DirentItem::Malformed { offset: 0 }]);
    }

    #[test]
    fn packed_block_tiles_exactly() {
        let names: Vec<Vec<u8>> = (0..40).map(|i| format!("file{i}").into_bytes()).collect();
        let items: Vec<(u64, u8, &[u8])> = names.iter().enumerate().map(|(i, n)| (i as u64 + 4, FT_REGULAR, &n[..])).collect();
        let block = DirEntryBlock::pack(&items).unwrap().encode();
        let total: usize = iterate_dirents(&block[..])
            .map(|it| match it {
                DirentItem::Entry { entry, .. } => entry.rec_len as usize,
                DirentItem::Malformed { offset } => panic!("malformed at {offset}"),
            })
            .sum();
        assert_eq!(total, DIR_TAIL_OFFSET);
        let (magic, stored, computed) = dir_block_checksums(&block[..]);
        assert!(magic);
        assert_eq!(stored, computed);
    }

    #[test]
    fn oversized_pack_is_rejected() {
        let name = [b'x'; 200];
        let items: Vec<(u64, u8, &[u8])> = (0..20).map(|i| (i + 4, FT_REGULAR, &name[..])).collect();
        assert!(DirEntryBlock::pack(&items).is_none());
    }
}
