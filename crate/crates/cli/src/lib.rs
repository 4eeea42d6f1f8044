//! Shared pieces of the command-line tools.

pub mod bench;

use std::process::ExitCode;

/// `pfsck` exit statuses.
pub const EXIT_CLEAN: u8 = 0;
pub const EXIT_REPAIRED: u8 = 1;
pub const EXIT_UNRECOGNIZED: u8 = 2;
/// Usage, configuration or I/O problems.
pub const EXIT_ERROR: u8 = 3;

/// Peak resident set size of this process in KiB.
pub fn peak_rss_kib() -> u64 {
    // SAFETY: getrusage only writes the struct it is given.
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut ru) };
    if rc != 0 {
        return 0;
    }
    // Linux reports KiB, macOS bytes.
    if cfg!(target_os = "macos") {
        ru.ru_maxrss as u64 / 1024
    } else {
        ru.ru_maxrss as u64
    }
}

/// Parses clap arguments, sending usage errors to `EXIT_ERROR` so they
/// never look like an image verdict.
pub fn parse_args<T: clap::Parser>() -> Result<T, ExitCode> {
    match T::try_parse() {
        Ok(t) => Ok(t),
        Err(e) if e.exit_code() == 0 => e.exit(),
        Err(e) => {
            let _ = e.print();
            Err(ExitCode::from(EXIT_ERROR))
        }
    }
}

/// Comma-separated list parser for flags like `--threads 1,2,4`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(|x| x.parse().map_err(|e| format!("{x:?}: {e}"))).collect()
}

/// `p1:p2` thread split.
pub fn parse_split(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected p1:p2, got {s:?}"))?;
    let a = a.trim().parse::<u32>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<u32>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_lists() {
        assert_eq!(parse_split("6:2").unwrap(), (6, 2));
        assert!(parse_split("6").is_err());
        assert_eq!(parse_list::<u32>("1, 2,8").unwrap(), vec![1, 2, 8]);
    }

    #[test]
    fn rss_is_reported() {
        assert!(peak_rss_kib() > 0);
    }
}
