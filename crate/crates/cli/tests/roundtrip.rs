use std::path::Path;
use std::process::{Command, Output};

fn bin(name: &str) -> Command {
    let path = match name {
        "pmkfs" => env!("CARGO_BIN_EXE_pmkfs"),
        "pcorrupt" => env!("CARGO_BIN_EXE_pcorrupt"),
        "pfsck" => env!("CARGO_BIN_EXE_pfsck"),
        _ => env!("CARGO_BIN_EXE_pbench"),
    };
    let mut c = Command::new(path);
    c.env_remove("SFSCK_CONFIG");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn mkfs(dir: &Path, name: &str, files: u32, dirs: u32) -> std::path::PathBuf {
    let img = dir.join(name);
    let out = run(bin("pmkfs").arg("-o").arg(&img).args(["--files", &files.to_string(), "--dirs", &dirs.to_string(), "--seed", "4"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    img
}

#[test]
fn make_corrupt_check_check() {
    let dir = tempfile::tempdir().unwrap();
    let img = mkfs(dir.path(), "a.img", 800, 90);
    assert!(dir.path().join("a.img.manifest").exists());

    let first = run(bin("pfsck").arg(&img));
    assert_eq!(first.status.code(), Some(0));

    let out = run(bin("pcorrupt").arg(&img).args(["--plan", "InodeBadMode:2,DirentBadInode,OrphanDirectory,BitmapInodeFlip", "--seed", "7"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ledger = std::fs::read_to_string(dir.path().join("a.img.ledger")).unwrap();
    assert_eq!(ledger.lines().count(), 5);

    // Serial and sched agree on a copy of the same corrupted image.
    let copy = dir.path().join("b.img");
    std::fs::copy(&img, &copy).unwrap();
    let serial = run(bin("pfsck").arg(&img).args(["--report", "structured"]));
    let sched = run(bin("pfsck").arg(&copy).args(["--mode", "sched", "--threads", "4", "--report", "structured"]));
    assert_eq!(serial.status.code(), Some(1));
    assert_eq!(sched.status.code(), Some(1));
    assert_eq!(serial.stdout, sched.stdout);
    assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(&copy).unwrap());

    let again = run(bin("pfsck").arg(&img));
    assert_eq!(again.status.code(), Some(0), "{}", String::from_utf8_lossy(&again.stdout));
}

#[test]
fn minimal_image_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let img = mkfs(dir.path(), "m.img", 0, 0);
    let out = run(bin("pfsck").arg(&img).args(["--mode", "datapara", "--threads", "2"]));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("summary findings=0"), "{text}");
}

#[test]
fn short_file_is_unrecognized() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.img");
    std::fs::write(&p, [0u8; 100]).unwrap();
    assert_eq!(run(bin("pfsck").arg(&p)).status.code(), Some(2));
    std::fs::write(&p, vec![0u8; 8192]).unwrap();
    assert_eq!(run(bin("pfsck").arg(&p)).status.code(), Some(2));
}

#[test]
fn usage_errors_do_not_look_like_verdicts() {
    assert_eq!(run(bin("pfsck").arg("--no-such-flag")).status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let img = mkfs(dir.path(), "s.img", 10, 2);
    let out = run(bin("pfsck").arg(&img).args(["--mode", "pipeline-split-manual", "--threads", "4", "--split", "3:3"]));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn env_config_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let img = mkfs(dir.path(), "c.img", 50, 5);
    let good = dir.path().join("good.toml");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&good, "[scheduler]\ntick_ms = 3\n").unwrap();
    std::fs::write(&bad, "[cache]\ncapacity_blocks = 1\n").unwrap();
    let flag_only = run(bin("pfsck").arg(&img).arg("--config").arg(&bad));
    assert_eq!(flag_only.status.code(), Some(3));
    let both = run(bin("pfsck").arg(&img).arg("--config").arg(&bad).env("SFSCK_CONFIG", &good));
    assert_eq!(both.status.code(), Some(0));
}

#[test]
fn debug_trace_dumps_events() {
    let dir = tempfile::tempdir().unwrap();
    let img = mkfs(dir.path(), "t.img", 300, 30);
    let out = run(bin("pfsck").arg(&img).args(["--mode", "sched", "--threads", "2", "--debug-trace"]));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("Pass1Closed") && err.contains("Tick"), "{err}");
    assert!(err.lines().any(|l| l.starts_with("stats ") && l.contains("peak_rss_kib=")));
}

#[test]
fn bench_rows_match_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin("pbench").args(["--images", "dir", "--modes", "serial,datapara,sched", "--threads", "2", "--reps", "3", "--workdir"]).arg(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["oracle_match"] == true && r["reps"] == 3));
}
