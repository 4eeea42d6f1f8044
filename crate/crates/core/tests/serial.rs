use sfsck_core::build::{build_image, ImageSpec};
use sfsck_core::check::{run_serial, CheckOptions, FindingCode};
use sfsck_core::corrupt::{inject_corruptions, CorruptionKind};
use sfsck_core::format::Superblock;
use sfsck_core::Image;

fn spec(seed: u64) -> ImageSpec {
    ImageSpec::sized_for(300, 30, 3, seed)
}

fn check(img: &mut Image) -> sfsck_core::check::Report {
    run_serial(img, &CheckOptions::default()).unwrap()
}

#[test]
fn built_images_are_clean() {
    for seed in 0..4 {
        let (mut img, _) = build_image(&spec(seed)).unwrap();
        let before = img.clone();
        let r = check(&mut img);
        assert!(r.is_clean(), "{}", r.canonical_text());
        assert_eq!(img, before);
    }
}

#[test]
fn empty_filesystem_is_clean() {
    let (mut img, _) = build_image(&ImageSpec::sized_for(0, 0, 1, 3)).unwrap();
    assert!(check(&mut img).is_clean());
}

#[test]
fn each_kind_alone_is_detected_and_repaired() {
    for kind in CorruptionKind::ALL {
        for seed in 0..5 {
            let (mut img, _) = build_image(&spec(seed)).unwrap();
            let ledger = inject_corruptions(&mut img, &[(kind, 1)], seed * 31 + 7).unwrap();
            let r = check(&mut img);
            let want = kind.expected_code();
            assert!(
                r.findings.iter().any(|f| f.code == want),
                "{kind:?} seed {seed}: no {want:?}\n{}\n{}",
                r.canonical_text(),
                ledger.to_lines()
            );
            let again = check(&mut img);
            assert!(again.is_clean(), "{kind:?} seed {seed} not idempotent:\nfirst:\n{}\nsecond:\n{}", r.canonical_text(), again.canonical_text());
        }
    }
}

#[test]
fn duplicate_claim_names_both_inodes() {
    let (mut img, _) = build_image(&spec(2)).unwrap();
    let ledger = inject_corruptions(&mut img, &[(CorruptionKind::DuplicateBlockClaim, 1)], 4).unwrap();
    let rec = &ledger.records[0];
    let r = check(&mut img);
    let f = r.findings.iter().find(|f| f.code == FindingCode::MultiplyClaimedBlock).unwrap();
    assert!(f.detail.contains(&rec.inode.to_string()) && f.detail.contains(&rec.aux_inode.to_string()), "{}", f.detail);
}

#[test]
fn many_corruptions_are_all_detected_and_repair_conserves_counts() {
    for seed in 0..6 {
        let (mut img, _) = build_image(&ImageSpec::sized_for(600, 100, 2, seed)).unwrap();
        let plan: Vec<_> = CorruptionKind::ALL.iter().map(|&k| (k, 2)).collect();
        let ledger = inject_corruptions(&mut img, &plan, seed).unwrap();
        let r = check(&mut img);
        for rec in &ledger.records {
            assert!(r.findings.iter().any(|f| f.code == rec.kind.expected_code()), "{:?} undetected", rec.kind);
        }
        let again = check(&mut img);
        assert!(again.is_clean(), "seed {seed}:\n{}", again.canonical_text());
        let sb = Superblock::decode(img.read_block(0).unwrap());
        let geo = sb.geometry();
        let mut used = 0u64;
        for b in 0..geo.total_blocks {
            let (blk, bit) = geo.block_bit(b);
            used += img.bit(blk, bit).unwrap() as u64;
        }
        assert_eq!(used + sb.free_blocks, geo.total_blocks);
    }
}

#[test]
fn truncated_image_is_unrecognized() {
    let mut img = Image::from_bytes(vec![0; 100]);
    assert!(matches!(run_serial(&mut img, &CheckOptions::default()), Err(sfsck_core::Error::UnrecognizedImage(_))));
}

mod handcrafted {
    use super::*;
    use sfsck_core::build::Manifest;
    use sfsck_core::check::RepairAction;
    use sfsck_core::format::{DirEntryBlock, Inode, FT_DIR};

    fn first_block(img: &Image, ino: u64) -> u64 {
        let geo = img.superblock().unwrap().geometry();
        Inode::decode(img.inode_bytes(&geo, ino).unwrap()).direct[0]
    }

    fn edit_block(img: &mut Image, block: u64, f: impl FnOnce(&mut Vec<(u64, u8, Vec<u8>)>)) {
        let d = DirEntryBlock::decode(img.read_block(block).unwrap()).unwrap();
        let mut items: Vec<(u64, u8, Vec<u8>)> =
            d.entries.into_iter().filter(|e| e.inode != 0).map(|e| (e.inode, e.file_type, e.name)).collect();
        f(&mut items);
        let refs: Vec<(u64, u8, &[u8])> = items.iter().map(|(i, t, n)| (*i, *t, &n[..])).collect();
        img.write_block(block, &DirEntryBlock::pack(&refs).unwrap().encode()[..]).unwrap();
    }

    fn dirs(m: &Manifest) -> Vec<(u64, u64)> {
        m.entries.iter().filter(|e| e.kind == "dir").map(|e| (e.inode, e.parent)).collect()
    }

    #[test]
    fn detached_cycle_is_reported_and_reconnected() {
        let (mut img, m) = build_image(&ImageSpec::sized_for(40, 10, 1, 8)).unwrap();
        let top: Vec<u64> = dirs(&m).into_iter().filter(|&(i, p)| p == 2 && i > 3).map(|(i, _)| i).collect();
        let (a, b) = (top[0], top[1]);
        let root_block = first_block(&img, 2);
        edit_block(&mut img, root_block, |items| items.retain(|(i, _, _)| *i != a && *i != b));
        for (x, y) in [(a, b), (b, a)] {
            let blk = first_block(&img, x);
            edit_block(&mut img, blk, |items| {
                for it in items.iter_mut() {
                    if it.2 == b".." {
                        it.0 = y;
                    }
                }
                items.push((y, FT_DIR, b"loop".to_vec()));
            });
        }
        let r = check(&mut img);
        let unreachable: Vec<u64> =
            r.findings.iter().filter(|f| f.code == FindingCode::UnreachableDirectory).map(|f| f.inode).collect();
        assert_eq!(unreachable, vec![a.min(b), a.max(b)], "{}", r.canonical_text());
        assert!(r.findings.iter().filter(|f| f.code == FindingCode::UnreachableDirectory).all(|f| f.repair == RepairAction::ReconnectedToLostFound));
        let again = check(&mut img);
        assert!(again.is_clean(), "{}", again.canonical_text());
    }

    #[test]
    fn wrong_dotdot_is_rewritten_to_the_referring_parent() {
        let (mut img, m) = build_image(&ImageSpec::sized_for(40, 30, 1, 8)).unwrap();
        let (b, a) = dirs(&m).into_iter().find(|&(_, p)| p > 3).expect("nested dir");
        let blk = first_block(&img, b);
        edit_block(&mut img, blk, |items| {
            for it in items.iter_mut() {
                if it.2 == b".." {
                    it.0 = 2;
                }
            }
        });
        let r = check(&mut img);
        assert!(r.findings.iter().any(|f| f.code == FindingCode::DotDotMismatch && f.inode == b), "{}", r.canonical_text());
        let d = DirEntryBlock::decode(img.read_block(blk).unwrap()).unwrap();
        assert_eq!(d.entries.iter().find(|e| e.name == b"..").unwrap().inode, a);
        assert!(check(&mut img).is_clean());
    }

    #[test]
    fn directory_link_count_is_two_plus_subdirs() {
        let (mut img, m) = build_image(&ImageSpec::sized_for(40, 30, 1, 8)).unwrap();
        let geo = img.superblock().unwrap().geometry();
        for (d, _) in dirs(&m) {
            let k = dirs(&m).iter().filter(|&&(c, p)| p == d && c != d).count() as u16;
            assert_eq!(Inode::decode(img.inode_bytes(&geo, d).unwrap()).links_count, 2 + k);
        }
        assert!(check(&mut img).is_clean());
    }
}
