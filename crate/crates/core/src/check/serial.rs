//! Single-threaded checker: the reference every other mode must match.

use std::time::Instant;

use crate::cache::{BlockCache, CachedReader, ScanKind};
use crate::error::Result;
use crate::format::{Geometry, BLOCK_SIZE, INODES_PER_BLOCK};
use crate::image::Image;

use super::pass2::{check_dir_block, resolve_extra_links, verify_directories, DotDotDecision};
use super::repair::{clear_dirent_at, set_dirent_target};
use super::{
    pass1, pass3_connectivity, pass4_refcounts, pass5_bitmaps, CheckOptions, Finding, InodeVerdict, Report,
    ShadowState,
};
use crate::format::FT_DIR;

/// Clears the extra directory links chosen by `resolve_extra_links`.
pub fn apply_extra_links(image: &mut Image, extra: &[(Finding, super::DirentLoc)]) -> Result<Vec<Finding>> {
    let mut out = Vec::with_capacity(extra.len());
    for (f, loc) in extra {
        clear_dirent_at(image, loc.block, loc.offset)?;
        out.push(f.clone());
    }
    Ok(out)
}

/// Applies `..` decisions in directory order and records parents and the
/// `..` link credits.
pub fn apply_dotdot_decisions(
    state: &mut ShadowState,
    image: &mut Image,
    mut decisions: Vec<DotDotDecision>,
) -> Result<Vec<Finding>> {
    decisions.sort_by_key(|d| d.dir);
    let mut findings = Vec::new();
    for d in decisions {
        if let Some((rec, target)) = d.rewrite {
            set_dirent_target(image, rec.block, rec.offset, target, FT_DIR)?;
            if let Some(r) = state.dotdot.get_mut(&d.dir) {
                r.target = target;
            }
        }
        if let Some(p) = d.parent {
            state.parent_map.insert(d.dir, p);
        }
        if let Some(c) = d.count_for {
            state.icount[c as usize] += 1;
            state.dotdot_counted.insert(d.dir, c);
        }
        findings.extend(d.finding);
    }
    Ok(findings)
}

/// Everything after the pass-2 block scan that runs single-threaded in
/// every mode: extra links, `..` verification, passes 3 and 4.
pub fn late_pass2(state: &mut ShadowState, image: &mut Image) -> Result<Vec<Finding>> {
    let extra = resolve_extra_links(state);
    let mut findings = apply_extra_links(image, &extra)?;
    let decisions = verify_directories(state)?;
    findings.extend(apply_dotdot_decisions(state, image, decisions)?);
    Ok(findings)
}

/// Runs multi-claim resolution and applies its repairs.
pub fn finish_pass1_serial(state: &mut ShadowState, image: &mut Image) -> Result<Vec<Finding>> {
    let (findings, batches) = pass1::resolve_multi_claims(state, image)?;
    for b in &batches {
        for p in &b.patches {
            p.apply(image)?;
        }
    }
    state.finalize_db_list();
    Ok(findings)
}

pub fn geometry_of(image: &Image) -> Result<Geometry> {
    Ok(image.superblock()?.geometry())
}

/// Checks and repairs `image` in place, one pass at a time.
pub fn run_serial(image: &mut Image, opts: &CheckOptions) -> Result<Report> {
    let started = Instant::now();
    let geo = geometry_of(image)?;
    let mut report = Report::default();
    let mut state = ShadowState::new(geo);
    let mut cache = BlockCache::new(opts.cache);
    let mut findings = Vec::new();

    // Pass 1.
    let t = Instant::now();
    let mut verdict = InodeVerdict::default();
    let mut table = vec![0u8; BLOCK_SIZE];
    for tb in 0..geo.inode_table_blocks as u64 {
        let block = geo.inode_table_start + tb;
        table.copy_from_slice(cache.cached_read(image, block, ScanKind::InodeTable)?);
        let first = tb * INODES_PER_BLOCK;
        for ino in first.max(2)..(first + INODES_PER_BLOCK).min(geo.total_inodes) {
            let (_, off) = geo.inode_location(ino);
            let raw = &table[off..off + crate::format::INODE_SIZE];
            {
                let mut reader = CachedReader { cache: &mut cache, image };
                pass1::check_inode(&geo, ino, raw, &mut reader, &mut verdict)?;
            }
            for p in &verdict.patches {
                p.apply(image)?;
                cache.invalidate(p.block());
            }
            state.absorb_inode(&verdict);
            findings.append(&mut verdict.findings);
        }
    }
    findings.extend(finish_pass1_serial(&mut state, image)?);
    cache.clear();
    report.timings.pass[0] = t.elapsed();

    // Pass 2.
    let t = Instant::now();
    for i in 0..state.db_list.len() {
        let r = state.db_list[i];
        let bytes = cache.cached_read(image, r.block, ScanKind::Directory)?;
        let v = check_dir_block(r.dir, r.block, bytes, |ino| state.kind(ino));
        if let Some(nb) = &v.new_bytes {
            image.write_block(r.block, nb)?;
            cache.invalidate(r.block);
        }
        state.absorb_dir_block(&v);
        findings.extend(v.findings.iter().cloned());
    }
    state.sort_referrers();
    findings.extend(late_pass2(&mut state, image)?);
    report.timings.pass[1] = t.elapsed();

    let t = Instant::now();
    findings.extend(pass3_connectivity(&mut state, image)?);
    report.timings.pass[2] = t.elapsed();
    let t = Instant::now();
    findings.extend(pass4_refcounts(&mut state, image)?);
    report.timings.pass[3] = t.elapsed();
    let t = Instant::now();
    findings.extend(pass5_bitmaps(&mut state, image)?);
    report.timings.pass[4] = t.elapsed();

    report.findings = findings;
    report.canonicalize();
    report.stats = state.stats;
    report.cache = cache.stats();
    report.timings.total = started.elapsed();
    Ok(report)
}

/// Shadow state after serial passes 1 and 2 block scan, for comparisons.
pub fn serial_pass1_state(image: &mut Image) -> Result<ShadowState> {
    let geo = geometry_of(image)?;
    let mut state = ShadowState::new(geo);
    let mut verdict = InodeVerdict::default();
    for ino in 2..geo.total_inodes {
        let raw = image.inode_bytes(&geo, ino)?.to_vec();
        pass1::check_inode(&geo, ino, &raw, &mut crate::cache::DirectReader(image), &mut verdict)?;
        for p in &verdict.patches {
            p.apply(image)?;
        }
        state.absorb_inode(&verdict);
    }
    finish_pass1_serial(&mut state, image)?;
    Ok(state)
}
