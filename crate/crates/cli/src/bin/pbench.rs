//! Benchmark harness. Prints one JSON row per (image, mode, threads) and
//! fails if any run's report differs from the serial one.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sfsck_cli::bench::{calibrate, dir_intensive, file_intensive, run_suite, Scale, SuiteConfig};
use sfsck_cli::{parse_list, EXIT_ERROR};
use sfsck_core::build::ImageSpec;
use sfsck_core::engine::RunMode;

#[derive(Parser, Debug)]
#[command(name = "pbench", about = "Time pfsck across modes and thread counts")]
struct Args {
    /// Where bench images are kept between runs.
    #[arg(long, default_value = "target/bench")]
    workdir: PathBuf,
    #[arg(long, value_enum, default_value = "small")]
    scale: Scale,
    /// Image shapes: file (95:1), dir (1:1).
    #[arg(long, default_value = "file,dir")]
    images: String,
    #[arg(long, default_value = "serial,datapara,pipeline-split-equal,pipeline-split-manual,sched")]
    modes: String,
    #[arg(long, default_value = "1,2,4,8")]
    threads: String,
    /// Repetitions per cell; the median is reported. At least 3.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Also append rows to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measure per-object pass costs and print the directory-pass weight.
    #[arg(long)]
    calibrate: bool,
    /// pfsck binary; defaults to the one next to pbench.
    #[arg(long)]
    pfsck: Option<PathBuf>,
}

fn run(args: &Args) -> anyhow::Result<bool> {
    if args.calibrate {
        let c = calibrate(&ImageSpec::sized_for(20_000, 2_000, 2, 5), args.reps.max(3))?;
        println!("{}", serde_json::to_string(&c)?);
        return Ok(true);
    }
    let pfsck = match &args.pfsck {
        Some(p) => p.clone(),
        None => std::env::current_exe()?.with_file_name("pfsck"),
    };
    let mut images = Vec::new();
    for name in parse_list::<String>(&args.images).map_err(anyhow::Error::msg)? {
        images.push(match name.as_str() {
            "file" => file_intensive(args.scale),
            "dir" => dir_intensive(args.scale),
            other => anyhow::bail!("unknown image shape {other:?}"),
        });
    }
    let cfg = SuiteConfig {
        pfsck,
        workdir: args.workdir.clone(),
        images,
        modes: parse_list::<RunMode>(&args.modes).map_err(anyhow::Error::msg)?,
        threads: parse_list(&args.threads).map_err(anyhow::Error::msg)?,
        reps: args.reps.max(3),
    };
    let mut sink = match &args.out {
        Some(p) => Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let rows = run_suite(&cfg, |row| {
        let line = serde_json::to_string(row).expect("row serializes");
        println!("{line}");
        if let Some(f) = sink.as_mut() {
            let _ = writeln!(f, "{line}");
        }
    })?;
    let bad: Vec<_> = rows.iter().filter(|r| !r.oracle_match).collect();
    for r in &bad {
        eprintln!("pbench: {} {} x{} report differs from serial", r.image, r.mode, r.threads);
    }
    Ok(bad.is_empty())
}

fn main() -> ExitCode {
    let args = match sfsck_cli::parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("pbench: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
