use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{Geometry, Superblock, BLOCK_SIZE, INODE_SIZE};

/// A block-addressed byte store: the raw concatenation of all blocks.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image").field("blocks", &self.total_blocks()).finish()
    }
}

impl Image {
    pub fn zeroed(total_blocks: u64) -> Image {
        Image { data: vec![0; total_blocks as usize * BLOCK_SIZE] }
    }

    /// Wraps raw bytes; a trailing partial block is ignored by block I/O.
    pub fn from_bytes(data: Vec<u8>) -> Image {
        Image { data }
    }

    pub fn load(path: &Path) -> Result<Image> {
        Ok(Image::from_bytes(fs::read(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.data)?;
        Ok(())
    }

    pub fn total_blocks(&self) -> u64 {
        (self.data.len() / BLOCK_SIZE) as u64
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn read_block(&self, block: u64) -> Result<&[u8]> {
        let total = self.total_blocks();
        if block >= total {
            return Err(Error::OutOfRange { block, total });
        }
        let start = block as usize * BLOCK_SIZE;
        Ok(&self.data[start..start + BLOCK_SIZE])
    }

    pub fn block_mut(&mut self, block: u64) -> Result<&mut [u8]> {
        let total = self.total_blocks();
        if block >= total {
            return Err(Error::OutOfRange { block, total });
        }
        let start = block as usize * BLOCK_SIZE;
        Ok(&mut self.data[start..start + BLOCK_SIZE])
    }

    pub fn write_block(&mut self, block: u64, bytes: &[u8]) -> Result<()> {
        assert_eq!(bytes.len(), BLOCK_SIZE, "write_block takes a whole block");
        self.block_mut(block)?.copy_from_slice(bytes);
        Ok(())
    }

    /// Verified superblock, or `UnrecognizedImage`.
    pub fn superblock(&self) -> Result<Superblock> {
        let block0 = self
            .read_block(0)
            .map_err(|_| Error::UnrecognizedImage("image shorter than one block".into()))?;
        let sb = Superblock::parse_verified(block0)?;
        if sb.total_blocks > self.total_blocks() {
            return Err(Error::UnrecognizedImage(format!(
                "superblock claims {} blocks, file holds {}",
                sb.total_blocks,
                self.total_blocks()
            )));
        }
        Ok(sb)
    }

    pub fn write_superblock(&mut self, sb: &Superblock) -> Result<()> {
        let bytes = sb.encode();
        self.block_mut(0)?[..bytes.len()].copy_from_slice(&bytes);
        Ok(())
    }

    pub fn inode_bytes(&self, geo: &Geometry, ino: u64) -> Result<&[u8]> {
        let (block, off) = geo.inode_location(ino);
        Ok(&self.read_block(block)?[off..off + INODE_SIZE])
    }

    pub fn write_inode_bytes(&mut self, geo: &Geometry, ino: u64, raw: &[u8; INODE_SIZE]) -> Result<()> {
        let (block, off) = geo.inode_location(ino);
        self.block_mut(block)?[off..off + INODE_SIZE].copy_from_slice(raw);
        Ok(())
    }

    /// Overwrites `bytes.len()` bytes at an absolute image offset.
    pub fn write_at(&mut self, offset: u64, bytes: &[u8]) {
        let o = offset as usize;
        self.data[o..o + bytes.len()].copy_from_slice(bytes);
    }

    pub fn bytes_at(&self, offset: u64, len: usize) -> &[u8] {
        let o = offset as usize;
        &self.data[o..o + len]
    }

    pub fn bit(&self, block: u64, bit: u32) -> Result<bool> {
        let b = self.read_block(block)?;
        Ok(b[(bit / 8) as usize] & (1 << (bit % 8)) != 0)
    }

    pub fn set_bit(&mut self, block: u64, bit: u32, value: bool) -> Result<()> {
        let b = self.block_mut(block)?;
        let byte = &mut b[(bit / 8) as usize];
        if value {
            *byte |= 1 << (bit % 8);
        } else {
            *byte &= !(1 << (bit % 8));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_block() {
        let mut img = Image::zeroed(32);
        let data: Vec<u8> = (0..BLOCK_SIZE).map(|i| (i % 251) as u8).collect();
        img.write_block(17, &data).unwrap();
        assert_eq!(img.read_block(17).unwrap(), &data[..]);
    }

    #[test]
    fn read_past_end_is_out_of_range() {
        let img = Image::zeroed(32);
        assert!(matches!(img.read_block(32), Err(Error::OutOfRange { block: 32, total: 32 })));
    }

    #[test]
    fn short_file_is_unrecognized() {
        let img = Image::from_bytes(vec![0; 100]);
        assert!(matches!(img.superblock(), Err(Error::UnrecognizedImage(_))));
    }
}
