//! Builds a synthetic image and its manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sfsck_core::build::{build_image, ImageSpec};

#[derive(Parser, Debug)]
#[command(name = "pmkfs", about = "Build a populated SFS image")]
struct Args {
    /// Output image path; the manifest goes next to it as <out>.manifest.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    files: u64,
    #[arg(long, default_value_t = 100)]
    dirs: u64,
    /// Mean data blocks per regular file (0 for empty files).
    #[arg(long, default_value_t = 2)]
    mean_file_blocks: u32,
    #[arg(long, default_value_t = 16)]
    fanout: u32,
    /// Override the computed image size.
    #[arg(long)]
    blocks: Option<u64>,
    #[arg(long)]
    inodes: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let args = match sfsck_cli::parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    let mut spec = ImageSpec::sized_for(args.files, args.dirs, args.mean_file_blocks, args.seed);
    spec.max_dir_fanout = args.fanout;
    if let Some(b) = args.blocks {
        spec.total_blocks = b;
    }
    if let Some(i) = args.inodes {
        spec.total_inodes = i;
    }
    let result = build_image(&spec).and_then(|(img, manifest)| {
        img.save(&args.out)?;
        let mut m = args.out.clone().into_os_string();
        m.push(".manifest");
        std::fs::write(PathBuf::from(m), manifest.to_lines())?;
        Ok(img.total_blocks())
    });
    match result {
        Ok(blocks) => {
            eprintln!(
                "pmkfs: {} blocks, {} inodes, {} files, {} dirs -> {}",
                blocks,
                spec.total_inodes,
                spec.file_count,
                spec.dir_count,
                args.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pmkfs: {e}");
            ExitCode::from(sfsck_cli::EXIT_ERROR)
        }
    }
}
