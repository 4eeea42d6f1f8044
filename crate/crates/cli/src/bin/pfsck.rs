//! Checks and repairs an image file.
//!
//! Exit status: 0 clean, 1 inconsistencies found and repaired, 2 the file
//! is not a recognizable image, 3 usage or I/O error. A `stats` line with
//! timings and peak memory goes to stderr.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use sfsck_cli::{parse_split, peak_rss_kib, EXIT_CLEAN, EXIT_ERROR, EXIT_REPAIRED, EXIT_UNRECOGNIZED};
use sfsck_core::config::Config;
use sfsck_core::engine::{run_mode, EngineOptions, RunMode, UtilizationSource};
use sfsck_core::{Error, Image};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Text,
    Structured,
}

#[derive(Parser, Debug)]
#[command(name = "pfsck", about = "Check and repair an SFS image")]
struct Args {
    image: PathBuf,
    /// serial, datapara, pipeline-split-equal, pipeline-split-manual, sched, rsched.
    #[arg(long, default_value = "serial")]
    mode: RunMode,
    #[arg(long, default_value_t = 1)]
    threads: u32,
    /// Pass-1:pass-2 threads for pipeline-split-manual.
    #[arg(long, value_parser = parse_split)]
    split: Option<(u32, u32)>,
    /// TOML config; SFSCK_CONFIG takes precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    report: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Dump the engine event log (and scheduler ticks) to stderr.
    #[arg(long)]
    debug_trace: bool,
    /// Scripted utilization for rsched: `total:busy,busy,...`.
    #[arg(long)]
    fake_utilization: Option<String>,
}

fn fake_source(s: &str) -> Result<UtilizationSource, String> {
    let (total, busy) = s.split_once(':').ok_or("expected total:busy,busy,...")?;
    Ok(UtilizationSource::Scripted {
        total_cores: total.parse().map_err(|e| format!("{e}"))?,
        busy: sfsck_cli::parse_list(busy)?,
    })
}

fn run(args: &Args) -> Result<u8, Error> {
    let config = Config::resolve(args.config.as_deref())?;
    let mut opts = EngineOptions::from_config(&config, args.threads);
    opts.split = args.split;
    opts.trace = args.debug_trace;
    if let Some(s) = &args.fake_utilization {
        opts.utilization = fake_source(s).map_err(Error::Config)?;
    }
    let mut img = Image::load(&args.image)?;
    let t = Instant::now();
    let out = run_mode(&mut img, args.mode, &opts)?;
    let wall = t.elapsed();
    let report = &out.report;
    if !report.is_clean() {
        img.save(&args.image)?;
    }

    let body = match args.report {
        ReportFormat::Text => report.canonical_text(),
        ReportFormat::Structured => report.structured(),
    };
    match &args.report_out {
        Some(p) => std::fs::write(p, body)?,
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    if args.debug_trace {
        for e in &out.events {
            eprintln!("trace {:>12} {}", e.t_ns, serde_json::to_string(&e.event).unwrap_or_default());
        }
        for q in &out.queues {
            eprintln!("trace queue={} enqueued={} dequeued={}", q.name, q.enqueued, q.dequeued);
        }
    }
    let p = report.timings.pass.map(|d| d.as_secs_f64() * 1e3);
    eprintln!(
        "stats mode={} threads={} findings={} wall_ms={:.3} pass_ms={:.3},{:.3},{:.3},{:.3},{:.3} barriers={} cache_hits={} cache_misses={} peak_rss_kib={}",
        args.mode,
        args.threads,
        report.findings.len(),
        wall.as_secs_f64() * 1e3,
        p[0],
        p[1],
        p[2],
        p[3],
        p[4],
        report.barriers,
        report.cache.hits,
        report.cache.misses,
        peak_rss_kib()
    );
    Ok(if report.is_clean() { EXIT_CLEAN } else { EXIT_REPAIRED })
}

fn main() -> ExitCode {
    let args = match sfsck_cli::parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    match run(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e @ Error::UnrecognizedImage(_)) => {
            eprintln!("pfsck: {e}");
            ExitCode::from(EXIT_UNRECOGNIZED)
        }
        Err(e) => {
            eprintln!("pfsck: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
