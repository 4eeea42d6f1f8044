//! Injects recorded corruptions into an image in place.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sfsck_core::corrupt::{inject_corruptions, parse_plan, CorruptionLedger};
use sfsck_core::Image;

#[derive(Parser, Debug)]
#[command(name = "pcorrupt", about = "Corrupt an SFS image and record what changed")]
struct Args {
    image: PathBuf,
    /// Comma-separated `Kind:count` list, e.g. `InodeBadMode:2,OrphanDirectory`.
    #[arg(long, required_unless_present = "restore")]
    plan: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ledger path; defaults to <image>.ledger.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Undo a previous run using its ledger instead of corrupting.
    #[arg(long, conflicts_with = "plan")]
    restore: Option<PathBuf>,
}

fn run(args: &Args) -> anyhow::Result<String> {
    let mut img = Image::load(&args.image)?;
    if let Some(path) = &args.restore {
        let ledger = CorruptionLedger::from_lines(&std::fs::read_to_string(path)?)?;
        ledger.restore(&mut img)?;
        img.save(&args.image)?;
        return Ok(format!("restored {} records", ledger.records.len()));
    }
    let plan = parse_plan(args.plan.as_deref().unwrap_or_default())?;
    let ledger = inject_corruptions(&mut img, &plan, args.seed)?;
    img.save(&args.image)?;
    let path = args.ledger.clone().unwrap_or_else(|| {
        let mut p = args.image.clone().into_os_string();
        p.push(".ledger");
        p.into()
    });
    std::fs::write(&path, ledger.to_lines())?;
    Ok(format!("{} records -> {}", ledger.records.len(), path.display()))
}

fn main() -> ExitCode {
    let args = match sfsck_cli::parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    match run(&args) {
        Ok(msg) => {
            eprintln!("pcorrupt: {msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pcorrupt: {e}");
            ExitCode::from(sfsck_cli::EXIT_ERROR)
        }
    }
}
