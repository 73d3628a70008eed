//! Settings file and the merge of flags, environment and file values.
//! Flags and environment variables arrive through clap; the file fills the
//! gaps, then defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";
pub const DEFAULT_BACKEND: &str = "oracle";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_LOG_LEVEL: &str = "info";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub version: Option<u32>,
    pub listen: Option<String>,
    pub backend: Option<String>,
    pub scenario_dir: Option<PathBuf>,
    pub task_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub log_level: Option<String>,
    pub record_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub stt_url: Option<String>,
    pub tts_url: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: FileConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let Some(v) = config.version {
            if v != 1 {
                bail!("config {}: unsupported version {v}", path.display());
            }
        }
        // relative directories are taken relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
        Ok(FileConfig {
            scenario_dir: rebase(config.scenario_dir),
            task_dir: rebase(config.task_dir),
            record_dir: rebase(config.record_dir),
            ui_dir: rebase(config.ui_dir),
            ..config
        })
    }
}

/// Settings shared by every subcommand after merging.
#[derive(Debug, Clone)]
pub struct Settings {
    pub scenario_dir: Option<PathBuf>,
    pub task_dir: Option<PathBuf>,
    pub seed: u64,
    pub log_level: String,
}

pub fn existing_dir(what: &str, dir: Option<PathBuf>) -> Result<Option<PathBuf>> {
    match dir {
        Some(d) if !d.is_dir() => bail!("{what} `{}` is not a directory", d.display()),
        other => Ok(other),
    }
}
