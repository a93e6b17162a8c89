//! JSON engine configuration. Every field is optional; explicit CLI flags
//! take precedence over file values, which take precedence over defaults.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clonebot_core::index::Metric;
use serde::{Deserialize, Serialize};

use crate::engine::ReplyMode;
use crate::error::CliError;

pub const DEFAULT_HISTORY: usize = 10;
pub const DEFAULT_TTL_SECS: u64 = 3600;
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexChoice {
    Flat,
    Hnsw,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub corpus: Option<PathBuf>,
    pub engine: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub index: Option<IndexChoice>,
    pub context_turns: Option<usize>,
    pub dim: Option<usize>,
    pub preset: Option<String>,
    pub mode: Option<ReplyMode>,
    pub k: Option<usize>,
    pub history: Option<usize>,
    pub ttl_secs: Option<u64>,
    pub addr: Option<String>,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let config: EngineConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        config.check_paths()?;
        Ok(config)
    }

    /// Referenced paths must exist when the configuration is read.
    pub fn check_paths(&self) -> Result<(), CliError> {
        for (name, path) in [("corpus", &self.corpus), ("engine", &self.engine)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(CliError::Usage(format!("config {name} path {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Resolves a required path from a flag or the config.
pub fn required_path(flag: Option<PathBuf>, config: Option<&PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| config.cloned())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or config)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_config() {
        let c: EngineConfig = serde_json::from_str(r#"{"metric":"l2","index":"hnsw","history":4,"mode":"sampler"}"#).unwrap();
        assert_eq!(c.metric, Some(Metric::L2));
        assert_eq!(c.index, Some(IndexChoice::Hnsw));
        assert_eq!(c.history, Some(4));
        assert_eq!(c.mode, Some(ReplyMode::Sampler));
        assert!(c.engine.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<EngineConfig>(r#"{"metrics":"l2"}"#).is_err());
    }

    #[test]
    fn missing_path_is_usage_error() {
        let c = EngineConfig {
            engine: Some("/definitely/not/here".into()),
            ..Default::default()
        };
        assert_eq!(c.check_paths().unwrap_err().exit_code(), 1);
    }
}
