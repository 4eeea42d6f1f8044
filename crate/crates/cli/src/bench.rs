//! Benchmark suite: timed `pfsck` runs in child processes, so each run's
//! peak memory is its own, with every report checked against serial.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Serialize;
use sfsck_core::build::{build_image, ImageSpec};
use sfsck_core::check::{run_serial, CheckOptions};
use sfsck_core::engine::RunMode;
use sfsck_core::format::BLOCK_SIZE;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchImage {
    pub name: String,
    pub spec: ImageSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    /// Seconds per run; for smoke tests.
    Small,
    /// 1 GiB file-intensive image with over 500k inodes.
    Desk,
}

/// 95 files per directory.
pub fn file_intensive(scale: Scale) -> BenchImage {
    let spec = match scale {
        Scale::Small => ImageSpec::sized_for(19_000, 200, 1, 11),
        Scale::Desk => ImageSpec {
            total_blocks: 262_144,
            total_inodes: 524_288,
            file_count: 510_000,
            dir_count: 5_368,
            mean_file_blocks: 0,
            max_dir_fanout: 16,
            seed: 11,
        },
    };
    BenchImage { name: format!("file-{scale:?}").to_lowercase(), spec }
}

/// One file per directory.
pub fn dir_intensive(scale: Scale) -> BenchImage {
    let spec = match scale {
        Scale::Small => ImageSpec::sized_for(6_000, 6_000, 1, 12),
        Scale::Desk => ImageSpec::sized_for(40_000, 40_000, 1, 12),
    };
    BenchImage { name: format!("dir-{scale:?}").to_lowercase(), spec }
}

/// Builds `img` under `workdir` unless a file of the right size exists.
pub fn ensure_image(workdir: &Path, img: &BenchImage) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(workdir)?;
    let path = workdir.join(format!("{}-{}.img", img.name, img.spec.seed));
    let want = img.spec.total_blocks * BLOCK_SIZE as u64;
    if std::fs::metadata(&path).map(|m| m.len() == want).unwrap_or(false) {
        return Ok(path);
    }
    let (image, _) = build_image(&img.spec)?;
    image.save(&path)?;
    Ok(path)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSample {
    pub exit: i32,
    pub wall_ms: f64,
    pub pass_ms: [f64; 5],
    pub peak_rss_kib: u64,
    pub findings: u64,
    pub report: String,
}

fn stats_fields(stderr: &str) -> Option<BTreeMap<String, String>> {
    let line = stderr.lines().rev().find(|l| l.starts_with("stats "))?;
    Some(
        line.split_whitespace()
            .skip(1)
            .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect(),
    )
}

/// Runs `pfsck` once and parses its stats line and structured report.
pub fn run_pfsck(pfsck: &Path, image: &Path, mode: RunMode, threads: u32, extra: &[String]) -> anyhow::Result<RunSample> {
    let report = tempfile_path(image, mode, threads);
    let mut cmd = Command::new(pfsck);
    cmd.arg(image)
        .args(["--mode", mode.as_str(), "--threads", &threads.to_string(), "--report", "structured"])
        .arg("--report-out")
        .arg(&report)
        .args(extra)
        .stdout(Stdio::null())
        .stderr(Stdio::piped());
    if mode == RunMode::PipelineSplitManual && threads > 1 {
        let p2 = (threads / 4).max(1);
        cmd.args(["--split", &format!("{}:{p2}", threads - p2)]);
    }
    let out = cmd.output().with_context(|| format!("running {}", pfsck.display()))?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    let exit = out.status.code().unwrap_or(-1);
    let Some(f) = stats_fields(&stderr) else {
        bail!("{mode} x{threads}: no stats line (exit {exit}): {stderr}");
    };
    let num = |k: &str| f.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
    let mut pass_ms = [0.0; 5];
    if let Some(p) = f.get("pass_ms") {
        for (d, s) in pass_ms.iter_mut().zip(p.split(',')) {
            *d = s.parse().unwrap_or(0.0);
        }
    }
    let body = std::fs::read_to_string(&report).unwrap_or_default();
    let _ = std::fs::remove_file(&report);
    Ok(RunSample {
        exit,
        wall_ms: num("wall_ms"),
        pass_ms,
        peak_rss_kib: num("peak_rss_kib") as u64,
        findings: num("findings") as u64,
        report: body,
    })
}

fn tempfile_path(image: &Path, mode: RunMode, threads: u32) -> PathBuf {
    let mut p = image.as_os_str().to_owned();
    p.push(format!(".{mode}.{threads}.{}.report", std::process::id()));
    p.into()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// One (image, mode, threads) cell.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub image: String,
    pub mode: String,
    pub threads: u32,
    pub reps: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub pass_ms: [f64; 5],
    pub peak_rss_kib: u64,
    pub speedup_vs_serial: f64,
    pub oracle_match: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub pfsck: PathBuf,
    pub workdir: PathBuf,
    pub images: Vec<BenchImage>,
    pub modes: Vec<RunMode>,
    pub threads: Vec<u32>,
    pub reps: usize,
}

fn summarize(image: &str, mode: RunMode, threads: u32, runs: &[RunSample], serial_ms: f64, ok: bool) -> Row {
    let walls: Vec<f64> = runs.iter().map(|r| r.wall_ms).collect();
    let mut pass_ms = [0.0; 5];
    for (i, p) in pass_ms.iter_mut().enumerate() {
        *p = median(&runs.iter().map(|r| r.pass_ms[i]).collect::<Vec<_>>());
    }
    let rss: Vec<f64> = runs.iter().map(|r| r.peak_rss_kib as f64).collect();
    let m = median(&walls);
    Row {
        image: image.to_string(),
        mode: mode.to_string(),
        threads,
        reps: runs.len(),
        median_ms: m,
        min_ms: walls.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: walls.iter().copied().fold(0.0, f64::max),
        pass_ms,
        peak_rss_kib: median(&rss) as u64,
        speedup_vs_serial: if m > 0.0 { serial_ms / m } else { 0.0 },
        oracle_match: ok,
    }
}

/// Runs the suite. Serial goes first on every image and its report is
/// the oracle for every other row. `on_row` sees rows as they finish.
pub fn run_suite(cfg: &SuiteConfig, mut on_row: impl FnMut(&Row)) -> anyhow::Result<Vec<Row>> {
    let reps = cfg.reps.max(1);
    let mut rows = Vec::new();
    for img in &cfg.images {
        let path = ensure_image(&cfg.workdir, img)?;
        let serial: Vec<RunSample> =
            (0..reps).map(|_| run_pfsck(&cfg.pfsck, &path, RunMode::Serial, 1, &[])).collect::<anyhow::Result<_>>()?;
        let oracle = serial[0].report.clone();
        let serial_ok = serial.iter().all(|r| r.report == oracle && r.exit == 0);
        let serial_ms = median(&serial.iter().map(|r| r.wall_ms).collect::<Vec<_>>());
        let row = summarize(&img.name, RunMode::Serial, 1, &serial, serial_ms, serial_ok);
        on_row(&row);
        rows.push(row);
        for &mode in cfg.modes.iter().filter(|&&m| m != RunMode::Serial) {
            for &t in &cfg.threads {
                let runs: Vec<RunSample> =
                    (0..reps).map(|_| run_pfsck(&cfg.pfsck, &path, mode, t, &[])).collect::<anyhow::Result<_>>()?;
                let ok = runs.iter().all(|r| r.report == oracle && r.exit == serial[0].exit);
                let row = summarize(&img.name, mode, t, &runs, serial_ms, ok);
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Per-object check costs measured on a pristine image.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Calibration {
    pub inodes: u64,
    pub dir_blocks: u64,
    pub ns_per_inode: f64,
    pub ns_per_dir_block: f64,
    /// Directory-pass weight relative to an inode weight of 1.
    pub dir_weight: f64,
}

/// Median serial pass-1 and pass-2 cost per object over `reps` runs.
pub fn calibrate(spec: &ImageSpec, reps: usize) -> anyhow::Result<Calibration> {
    let (pristine, _) = build_image(spec)?;
    let mut per_inode = Vec::new();
    let mut per_block = Vec::new();
    let mut counts = (0, 0);
    for _ in 0..reps.max(1) {
        let mut img = pristine.clone();
        let r = run_serial(&mut img, &CheckOptions::default())?;
        let c = r.stats.objects_checked;
        counts = (c[0], c[1]);
        let ns = |d: Duration, n: u64| d.as_nanos() as f64 / n.max(1) as f64;
        per_inode.push(ns(r.timings.pass[0], c[0]));
        per_block.push(ns(r.timings.pass[1], c[1]));
    }
    let (i, b) = (median(&per_inode), median(&per_block));
    Ok(Calibration {
        inodes: counts.0,
        dir_blocks: counts.1,
        ns_per_inode: i,
        ns_per_dir_block: b,
        dir_weight: if i > 0.0 { b / i } else { 0.0 },
    })
}
