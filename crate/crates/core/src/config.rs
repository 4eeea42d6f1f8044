//! Tunables loaded from a TOML file.
//!
//! ```toml
//! [scheduler]
//! weights = [1.0, 25.0]
//! tick_ms = 10
//! budget_step = 2
//!
//! [cache]
//! capacity_blocks = 4096
//! readahead_inode_scan = 16
//! readahead_dir_scan = 8
//!
//! [engine]
//! granularity = 2048
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cache::CacheConfig;
use crate::error::{Error, Result};

/// Environment variable naming a config file; wins over `--config`.
pub const CONFIG_ENV: &str = "SFSCK_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Per-pass weights: inode pass, directory pass. The directory weight is
    /// the measured per-dir-block to per-inode cost ratio (`pbench --calibrate`).
    pub weights: [f64; 2],
    pub tick_ms: u64,
    pub budget_step: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { weights: [1.0, 25.0], tick_ms: 10, budget_step: 2 }
    }
}

impl SchedulerConfig {
    pub fn weights_milli(&self) -> [u64; 2] {
        self.weights.map(|w| (w * 1000.0).round() as u64)
    }

    pub fn tick(&self) -> Duration {
        Duration::from_millis(self.tick_ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Inodes per pass-1 work item.
    pub granularity: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { granularity: 2048 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scheduler: SchedulerConfig,
    pub cache: CacheConfig,
    pub engine: EngineConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Config from `$SFSCK_CONFIG`, else `cli_path`, else defaults.
    pub fn resolve(cli_path: Option<&Path>) -> Result<Config> {
        let env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        match env.as_deref().or(cli_path) {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cache.validate()?;
        if self.scheduler.weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Config(format!("weights must be positive, got {:?}", self.scheduler.weights)));
        }
        if self.scheduler.weights_milli().contains(&0) {
            return Err(Error::Config("weights below 0.001 are not representable".into()));
        }
        if self.scheduler.tick_ms == 0 || self.scheduler.budget_step == 0 {
            return Err(Error::Config("tick_ms and budget_step must be at least 1".into()));
        }
        if self.engine.granularity == 0 {
            return Err(Error::Config("granularity must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(c.scheduler.weights_milli(), [1000, 25000]);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = Config::parse("[scheduler]\ntick_ms = 5\n").unwrap();
        assert_eq!(c.scheduler.tick_ms, 5);
        assert_eq!(c.scheduler.budget_step, 2);
        assert_eq!(c.cache, CacheConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse("[scheduler]\nweights = [0.0, 1.0]\n").is_err());
        assert!(Config::parse("[cache]\ncapacity_blocks = 2\n").is_err());
        assert!(Config::parse("[engine]\ngranularity = 0\n").is_err());
        assert!(Config::parse("bogus = 1\n").is_err());
    }
}
