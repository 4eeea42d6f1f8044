//! Deterministic synthetic image population.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitmap::Bitmap;
use crate::error::{Error, Result};
use crate::format::{
    DirEntryBlock, Geometry, Inode, InodeKind, Superblock, BITS_PER_BLOCK, BLOCK_SIZE,
    DIRECT_POINTERS, FIRST_USER_INODE, INLINE_SYMLINK_MAX, LOST_FOUND_INODE, MAX_FILE_BLOCKS,
    ROOT_INODE,
};
use crate::image::Image;

const BASE_MTIME: u64 = 1_600_000_000;
const SYMLINK_PERCENT: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub total_blocks: u64,
    pub total_inodes: u64,
    pub file_count: u64,
    pub dir_count: u64,
    pub mean_file_blocks: u32,
    pub max_dir_fanout: u32,
    pub seed: u64,
}

impl ImageSpec {
    /// Small image sized to hold the requested population comfortably.
    pub fn sized_for(file_count: u64, dir_count: u64, mean_file_blocks: u32, seed: u64) -> ImageSpec {
        let objects = file_count + dir_count + FIRST_USER_INODE;
        let total_inodes = (objects + objects / 4 + 32).next_multiple_of(32);
        let data = file_count * (mean_file_blocks as u64 * 3 / 2 + 2) + dir_count * 2 + 64;
        let meta = 1 + 2 + total_inodes / 32 + 2;
        ImageSpec {
            total_blocks: (data + data / 8 + meta + 64).next_multiple_of(64),
            total_inodes,
            file_count,
            dir_count,
            mean_file_blocks,
            max_dir_fanout: 16,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub inode: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub parent: u64,
    pub name: String,
    pub size: u64,
    /// Data block extents as `[start, length]`, in logical order.
    pub blocks: Vec<[u64; 2]>,
    /// Indirect pointer block, 0 when absent.
    pub indirect: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn count(&self, kind: InodeKind) -> u64 {
        self.entries.iter().filter(|e| e.kind == kind.name()).count() as u64
    }

    /// One JSON object per line, in inode order.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Manifest> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            entries.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                what: "manifest",
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        Ok(Manifest { entries })
    }
}

struct Node {
    kind: InodeKind,
    parent: u64,
    name: Vec<u8>,
    size: u64,
    nblocks: u64,
    symlink_target: Vec<u8>,
    subdirs: Vec<u64>,
    children: Vec<u64>,
}

fn extents(blocks: &[u64]) -> Vec<[u64; 2]> {
    let mut out: Vec<[u64; 2]> = Vec::new();
    for &b in blocks {
        match out.last_mut() {
            Some(e) if e[0] + e[1] == b => e[1] += 1,
            _ => out.push([b, 1]),
        }
    }
    out
}

/// Builds a pristine image and the manifest of what it created.
pub fn build_image(spec: &ImageSpec) -> Result<(Image, Manifest)> {
    let geo = Geometry::compute(spec.total_blocks, spec.total_inodes)?;
    let needed = spec.file_count + spec.dir_count + FIRST_USER_INODE;
    if needed > spec.total_inodes {
        return Err(Error::SpecInfeasible(format!(
            "{} files + {} dirs need {needed} inodes, image has {}",
            spec.file_count, spec.dir_count, spec.total_inodes
        )));
    }
    if spec.dir_count > 0 && spec.max_dir_fanout == 0 {
        return Err(Error::SpecInfeasible("max_dir_fanout must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Namespace shape first: directory k hangs under the (k / fanout)-th
    // directory in breadth-first order (0 = root).
    let fanout = spec.max_dir_fanout.max(1) as u64;
    let dir_parent_index: Vec<u64> = (0..spec.dir_count).map(|k| k / fanout).collect();
    let mut dir_children: Vec<Vec<u64>> = vec![Vec::new(); spec.dir_count as usize + 1];
    for (k, &p) in dir_parent_index.iter().enumerate() {
        dir_children[p as usize].push(k as u64 + 1);
    }
    let mut dir_files: Vec<Vec<u64>> = vec![Vec::new(); spec.dir_count as usize + 1];
    for f in 0..spec.file_count {
        let d = rng.gen_range(0..=spec.dir_count);
        dir_files[d as usize].push(f);
    }

    // Inode numbers in breadth-first order, each directory followed by its
    // subdirectories and then its files.
    let mut dir_ino = vec![0u64; spec.dir_count as usize + 1];
    let mut file_ino = vec![0u64; spec.file_count as usize];
    dir_ino[0] = ROOT_INODE;
    let mut next = FIRST_USER_INODE;
    let mut queue = std::collections::VecDeque::from([0u64]);
    while let Some(d) = queue.pop_front() {
        for &c in &dir_children[d as usize] {
            dir_ino[c as usize] = next;
            next += 1;
            queue.push_back(c);
        }
        for &f in &dir_files[d as usize] {
            file_ino[f as usize] = next;
            next += 1;
        }
    }

    let used_inodes = next;
    let mut nodes: Vec<Option<Node>> = (0..used_inodes).map(|_| None).collect();
    let new_dir = |parent: u64, name: Vec<u8>| Node {
        kind: InodeKind::Directory,
        parent,
        name,
        size: 0,
        nblocks: 0,
        symlink_target: Vec::new(),
        subdirs: Vec::new(),
        children: Vec::new(),
    };
    nodes[ROOT_INODE as usize] = Some(new_dir(ROOT_INODE, b"/".to_vec()));
    nodes[LOST_FOUND_INODE as usize] = Some(new_dir(ROOT_INODE, b"lost+found".to_vec()));
    for k in 1..=spec.dir_count {
        let ino = dir_ino[k as usize];
        let parent = dir_ino[dir_parent_index[k as usize - 1] as usize];
        nodes[ino as usize] = Some(new_dir(parent, format!("d{ino}").into_bytes()));
    }
    let mean = spec.mean_file_blocks as u64;
    let (lo, hi) = if mean == 0 { (0, 0) } else { ((mean / 2).max(1), (mean * 3 / 2).max(1)) };
    for (d, files) in dir_files.iter().enumerate() {
        let parent = dir_ino[d];
        for &f in files {
            let ino = file_ino[f as usize];
            let node = if rng.gen_range(0..100) < SYMLINK_PERCENT {
                let len = rng.gen_range(1..=120usize);
                let target: Vec<u8> = (0..len).map(|i| b'a' + ((ino as usize + i) % 26) as u8).collect();
                Node {
                    kind: InodeKind::Symlink,
                    parent,
                    name: format!("l{ino}").into_bytes(),
                    size: len as u64,
                    nblocks: if len as u64 > INLINE_SYMLINK_MAX { 1 } else { 0 },
                    symlink_target: target,
                    subdirs: Vec::new(),
                    children: Vec::new(),
                }
            } else {
                let n = rng.gen_range(lo..=hi).min(MAX_FILE_BLOCKS);
                let size = if n == 0 { 0 } else { (n - 1) * BLOCK_SIZE as u64 + rng.gen_range(1..=BLOCK_SIZE as u64) };
                Node {
                    kind: InodeKind::Regular,
                    parent,
                    name: format!("f{ino}").into_bytes(),
                    size,
                    nblocks: n,
                    symlink_target: Vec::new(),
                    subdirs: Vec::new(),
                    children: Vec::new(),
                }
            };
            nodes[ino as usize] = Some(node);
        }
    }
    // Wire children lists in inode order.
    for ino in FIRST_USER_INODE - 1..used_inodes {
        let (parent, is_dir) = match &nodes[ino as usize] {
            Some(n) => (n.parent, n.kind == InodeKind::Directory),
            None => continue,
        };
        let p = nodes[parent as usize].as_mut().expect("parent exists");
        p.children.push(ino);
        if is_dir {
            p.subdirs.push(ino);
        }
    }

    // Directory contents, packed into as many blocks as they need.
    let mut dir_blocks: Vec<(u64, Vec<Box<[u8; BLOCK_SIZE]>>)> = Vec::new();
    for ino in ROOT_INODE..used_inodes {
        let Some(node) = &nodes[ino as usize] else { continue };
        if node.kind != InodeKind::Directory {
            continue;
        }
        let mut items: Vec<(u64, u8, Vec<u8>)> = vec![
            (ino, InodeKind::Directory.dirent_type(), b".".to_vec()),
            (node.parent, InodeKind::Directory.dirent_type(), b"..".to_vec()),
        ];
        for &c in &node.children {
            let child = nodes[c as usize].as_ref().unwrap();
            items.push((c, child.kind.dirent_type(), child.name.clone()));
        }
        let mut blocks = Vec::new();
        let mut start = 0;
        while start < items.len() {
            let mut end = items.len();
            let packed = loop {
                let slice: Vec<(u64, u8, &[u8])> = items[start..end].iter().map(|(i, t, n)| (*i, *t, &n[..])).collect();
                if let Some(b) = DirEntryBlock::pack(&slice) {
                    break b;
                }
                // Shrink by estimate, then one at a time.
                let used: usize = items[start..end].iter().map(|(_, _, n)| crate::format::min_rec_len(n.len())).sum();
                let over = used.saturating_sub(crate::format::DIR_TAIL_OFFSET);
                let drop = (over / 24).max(1);
                end = (end - drop).max(start + 1);
            };
            blocks.push(packed.encode());
            start = end;
        }
        dir_blocks.push((ino, blocks));
    }
    for (ino, blocks) in &dir_blocks {
        let n = nodes[*ino as usize].as_mut().unwrap();
        n.nblocks = blocks.len() as u64;
        n.size = blocks.len() as u64 * BLOCK_SIZE as u64;
    }

    // Block allocation in inode order.
    let data_needed: u64 = nodes
        .iter()
        .flatten()
        .map(|n| n.nblocks + u64::from(n.nblocks > DIRECT_POINTERS as u64))
        .sum();
    if data_needed > geo.data_blocks() {
        return Err(Error::SpecInfeasible(format!(
            "population needs {data_needed} data blocks, image has {}",
            geo.data_blocks()
        )));
    }

    let mut image = Image::zeroed(spec.total_blocks);
    let mut block_map = Bitmap::new(spec.total_blocks);
    block_map.set_range(0, geo.first_data_block);
    let mut inode_map = Bitmap::new(spec.total_inodes);
    inode_map.set(0);
    inode_map.set(1);
    let mut cursor = geo.first_data_block;
    let mut manifest = Manifest::default();
    let mut dir_iter = dir_blocks.into_iter().peekable();

    for ino in ROOT_INODE..used_inodes {
        let Some(node) = &nodes[ino as usize] else { continue };
        let mut inode = Inode {
            mode: node.kind.mode_bits()
                | match node.kind {
                    InodeKind::Directory => 0o755,
                    InodeKind::Regular => 0o644,
                    InodeKind::Symlink => 0o777,
                },
            links_count: match node.kind {
                InodeKind::Directory => 2 + node.subdirs.len() as u16,
                _ => 1,
            },
            flags: 0,
            size: node.size,
            mtime: BASE_MTIME + rng.gen_range(0..86_400u64),
            ..Inode::default()
        };
        if ino == ROOT_INODE {
            // Root's ".." names itself.
            inode.links_count = 2 + node.subdirs.len() as u16;
        }

        let mut data = Vec::with_capacity(node.nblocks as usize);
        let mut indirect_block = 0;
        for logical in 0..node.nblocks {
            if logical == DIRECT_POINTERS as u64 {
                indirect_block = cursor;
                cursor += 1;
            }
            data.push(cursor);
            cursor += 1;
        }
        for (i, &b) in data.iter().enumerate().take(DIRECT_POINTERS) {
            inode.direct[i] = b;
        }
        if indirect_block != 0 {
            inode.indirect = indirect_block;
            let blk = image.block_mut(indirect_block)?;
            for (j, &b) in data[DIRECT_POINTERS..].iter().enumerate() {
                blk[j * 8..j * 8 + 8].copy_from_slice(&b.to_le_bytes());
            }
            block_map.set(indirect_block);
        }
        for &b in &data {
            block_map.set(b);
        }

        match node.kind {
            InodeKind::Directory => {
                let (dino, blocks) = dir_iter.next().expect("directory blocks prepared");
                debug_assert_eq!(dino, ino);
                for (b, bytes) in data.iter().zip(blocks) {
                    image.write_block(*b, &bytes[..])?;
                }
            }
            InodeKind::Symlink => {
                if data.is_empty() {
                    let mut raw = [0u8; DIRECT_POINTERS * 8];
                    raw[..node.symlink_target.len()].copy_from_slice(&node.symlink_target);
                    for (i, p) in inode.direct.iter_mut().enumerate() {
                        *p = u64::from_le_bytes(raw[i * 8..i * 8 + 8].try_into().unwrap());
                    }
                } else {
                    image.block_mut(data[0])?[..node.symlink_target.len()].copy_from_slice(&node.symlink_target);
                }
            }
            InodeKind::Regular => {}
        }

        inode.seal();
        image.write_inode_bytes(&geo, ino, &inode.encode())?;
        inode_map.set(ino);
        manifest.entries.push(ManifestEntry {
            inode: ino,
            kind: node.kind.name().to_string(),
            parent: node.parent,
            name: String::from_utf8_lossy(&node.name).into_owned(),
            size: node.size,
            blocks: extents(&data),
            indirect: indirect_block,
        });
    }

    write_bitmap(&mut image, geo.block_bitmap_start, &block_map)?;
    write_bitmap(&mut image, geo.inode_bitmap_start, &inode_map)?;
    let sb = Superblock::new(
        &geo,
        spec.total_blocks - block_map.count_ones(),
        spec.total_inodes - inode_map.count_ones(),
    );
    image.write_superblock(&sb)?;
    Ok((image, manifest))
}

fn write_bitmap(image: &mut Image, start: u64, bm: &Bitmap) -> Result<()> {
    let words = bm.words();
    let words_per_block = (BITS_PER_BLOCK / 64) as usize;
    for (i, chunk) in words.chunks(words_per_block).enumerate() {
        let blk = image.block_mut(start + i as u64)?;
        for (j, w) in chunk.iter().enumerate() {
            blk[j * 8..j * 8 + 8].copy_from_slice(&w.to_le_bytes());
        }
    }
    Ok(())
}
