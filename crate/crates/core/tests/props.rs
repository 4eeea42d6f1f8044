use std::time::Instant;

use proptest::prelude::*;

use sfsck_core::build::{build_image, ImageSpec};
use sfsck_core::cache::{BlockCache, CacheConfig, ScanKind};
use sfsck_core::check::serial::serial_pass1_state;
use sfsck_core::engine::{merge_contexts, partition_inodes, ThreadContext};
use sfsck_core::format::{DirEntryBlock, Geometry, Inode, Superblock, BLOCK_SIZE, INODE_SIZE};
use sfsck_core::sched::{assign_threads, core_budget, outstanding_work, PassLoad, SchedulerSnapshot, UtilizationSample};
use sfsck_core::Image;

fn snapshot(loads: &[(u64, u64, u64)]) -> SchedulerSnapshot {
    SchedulerSnapshot { passes: loads.iter().map(|&(q, n, w)| PassLoad::uniform(q, n, w)).collect() }
}

fn sample(total: u32, busy: u32, running: u32) -> UtilizationSample {
    UtilizationSample { total_cores: total, busy_cores: busy, checker_threads_running: running, timestamp: Instant::now() }
}

proptest! {
    #[test]
    fn thread_shares_sum_to_budget(
        loads in prop::collection::vec((0u64..100, 0u64..100, 1u64..5000), 1..5),
        c in 1u32..64,
    ) {
        let t = assign_threads(&snapshot(&loads), c);
        prop_assert_eq!(t.iter().sum::<u32>(), c);
        let active = loads.iter().filter(|l| l.0 * l.1 > 0).count();
        if c as usize >= active {
            for (l, ti) in loads.iter().zip(&t) {
                if l.0 * l.1 > 0 {
                    prop_assert!(*ti >= 1);
                }
            }
        }
    }

    #[test]
    fn thread_shares_are_scale_invariant(
        loads in prop::collection::vec((0u64..50, 0u64..50, 1u64..50), 1..5),
        c in 1u32..32,
        k in 2u64..9,
    ) {
        let base = assign_threads(&snapshot(&loads), c);
        let w: Vec<_> = loads.iter().map(|&(q, n, w)| (q, n, w * k)).collect();
        let q: Vec<_> = loads.iter().map(|&(q, n, w)| (q * k, n, w)).collect();
        prop_assert_eq!(&assign_threads(&snapshot(&w), c), &base);
        prop_assert_eq!(&assign_threads(&snapshot(&q), c), &base);
    }

    #[test]
    fn outstanding_work_is_linear(loads in prop::collection::vec((0u64..1000, 0u64..100, 1u64..5000), 1..5)) {
        let doubled: Vec<_> = loads.iter().map(|&(q, n, w)| (2 * q, n, w)).collect();
        prop_assert_eq!(outstanding_work(&snapshot(&doubled)), 2 * outstanding_work(&snapshot(&loads)));
    }

    #[test]
    fn budget_is_monotone_in_idle_cores(total in 1u32..64, running in 0u32..64, current in 1u32..64, step in 1u32..8) {
        let current = current.min(total);
        let mut prev = 0;
        for busy in (0..=total).rev() {
            let b = core_budget(&sample(total, busy, running), current, step);
            prop_assert!(b >= 1 && b <= total);
            prop_assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn budget_converges_within_step_bound(total in 2u32..64, busy in 0u32..64, step in 1u32..5) {
        let busy = busy.min(total - 1);
        let mut b = 1;
        let target = total - busy;
        let bound = (target - 1).div_ceil(step);
        for _ in 0..bound {
            b = core_budget(&sample(total, busy, b), b, step);
        }
        prop_assert_eq!(b, target);
    }

    #[test]
    fn cache_reads_match_direct_reads(
        ops in prop::collection::vec((0u64..64, any::<bool>(), 0u8..3), 1..300),
        capacity in 16usize..40,
        ra in 1usize..16,
    ) {
        let mut img = Image::zeroed(64);
        for b in 0..64u64 {
            img.block_mut(b).unwrap()[..8].copy_from_slice(&b.to_le_bytes());
        }
        let cfg = CacheConfig { capacity_blocks: capacity, readahead_inode_scan: ra, readahead_dir_scan: ra.div_ceil(2) };
        let mut cache = BlockCache::new(cfg);
        let mut stamp = 0u8;
        for (block, write, hint) in ops {
            if write {
                // Writes go to the image, then the cache is told, as at a barrier.
                stamp = stamp.wrapping_add(1);
                img.block_mut(block).unwrap()[100] = stamp;
                cache.invalidate(block);
            } else {
                let hint = [ScanKind::InodeTable, ScanKind::Directory, ScanKind::Random][hint as usize];
                let got = cache.cached_read(&img, block, hint).unwrap().to_vec();
                prop_assert_eq!(&got[..], img.read_block(block).unwrap());
            }
        }
        let s = cache.stats();
        prop_assert!(cache.len() <= capacity);
        prop_assert!(s.hits + s.misses > 0 || s.invalidations > 0 || cache.is_empty());
    }

    #[test]
    fn inode_round_trips(mode in any::<u16>(), links in any::<u16>(), size in any::<u64>(), ptrs in prop::array::uniform10(any::<u64>()), ind in any::<u64>()) {
        let mut i = Inode { mode, links_count: links, size, direct: ptrs, indirect: ind, ..Inode::default() };
        i.seal();
        let raw = i.encode();
        prop_assert_eq!(raw.len(), INODE_SIZE);
        prop_assert_eq!(Inode::decode(&raw), i);
    }

    #[test]
    fn superblock_round_trips(blocks in 64u64..1_000_000, inodes in 3u64..200_000, fb in any::<u64>(), fi in any::<u64>()) {
        if let Ok(geo) = Geometry::compute(blocks, inodes) {
            let sb = Superblock::new(&geo, fb, fi);
            let mut block0 = vec![0u8; BLOCK_SIZE];
            block0[..sb.encode().len()].copy_from_slice(&sb.encode());
            prop_assert_eq!(Superblock::decode(&block0), sb);
            prop_assert_eq!(sb.geometry(), geo);
        }
    }

    #[test]
    fn dir_blocks_round_trip(names in prop::collection::vec(("[a-z0-9]{1,40}", 4u64..100_000, prop::sample::select(vec![1u8, 2, 7])), 0..60)) {
        let items: Vec<(u64, u8, &[u8])> = names.iter().map(|(n, i, t)| (*i, *t, n.as_bytes())).collect();
        if let Some(b) = DirEntryBlock::pack(&items) {
            prop_assert_eq!(DirEntryBlock::decode(&b.encode()[..]), Some(b));
        }
    }

    #[test]
    fn partitions_tile_the_inode_space(total in 3u64..100_000, g in 1u32..5000) {
        let r = partition_inodes(total, g);
        prop_assert_eq!(r.first().unwrap().first, 2);
        prop_assert_eq!(r.iter().map(|x| x.count).sum::<u64>(), total - 2);
        for w in r.windows(2) {
            prop_assert_eq!(w[0].first + w[0].count, w[1].first);
        }
    }
}

#[test]
fn merged_contexts_equal_serial_pass1_state() {
    let (img, _) = build_image(&ImageSpec::sized_for(700, 80, 2, 4)).unwrap();
    let geo = img.superblock().unwrap().geometry();
    let mut serial_img = img.clone();
    let want = serial_pass1_state(&mut serial_img).unwrap();
    for workers in [1usize, 3, 5] {
        let mut ctxs: Vec<ThreadContext> = (0..workers).map(|w| ThreadContext::new(w, geo, CacheConfig::default())).collect();
        for (i, r) in partition_inodes(geo.total_inodes, 37).into_iter().enumerate() {
            ctxs[i % workers].check_range(&img, r, |s, v| s.absorb_inode(v)).unwrap();
        }
        let mut got = merge_contexts(geo, ctxs.into_iter().map(|c| c.shadow).collect(), &img).unwrap();
        got.finalize_db_list();
        assert!(got == want, "{workers} workers");
    }
}

#[test]
fn single_context_merge_is_identity() {
    let (img, _) = build_image(&ImageSpec::sized_for(200, 20, 2, 1)).unwrap();
    let geo = img.superblock().unwrap().geometry();
    let mut ctx = ThreadContext::new(0, geo, CacheConfig::default());
    for r in partition_inodes(geo.total_inodes, 64) {
        ctx.check_range(&img, r, |s, v| s.absorb_inode(v)).unwrap();
    }
    let mut own = ctx.shadow.clone();
    own.db_list.sort_unstable();
    let merged = merge_contexts(geo, vec![ctx.shadow], &img).unwrap();
    assert!(merged == own);
}
