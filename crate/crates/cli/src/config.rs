//! Run configuration: flags override the config file, which overrides defaults.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use combipart::FusionMode;
use serde::Deserialize;

use crate::Usage;

/// Settings that may come from a `--config` file (TOML, or JSON by extension).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub level: Option<u32>,
    pub strict: Option<bool>,
    pub mode: Option<FusionMode>,
    pub temperature: Option<f64>,
    pub radii: Option<Vec<f64>>,
    pub classes: Option<usize>,
    pub parallel: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Usage(format!("config {}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?
        };
        Ok(parsed)
    }
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MEAN_CLASSES: usize = 64;

/// Resolved values, after applying precedence.
#[derive(Debug, Clone)]
pub struct Settings {
    pub file: FileConfig,
    pub seed_flag: Option<u64>,
}

impl Settings {
    pub fn seed(&self) -> u64 {
        self.seed_flag.or(self.file.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn level(&self, flag: Option<u32>) -> u32 {
        flag.or(self.file.level)
            .unwrap_or(combipart::cells::DEFAULT_LEVEL as u32)
    }

    pub fn strict(&self, flag: bool) -> bool {
        flag || self.file.strict.unwrap_or(false)
    }

    pub fn mode(&self, flag: Option<FusionMode>) -> FusionMode {
        flag.or(self.file.mode).unwrap_or_default()
    }

    pub fn temperature(&self, flag: Option<f64>) -> f64 {
        flag.or(self.file.temperature)
            .unwrap_or(DEFAULT_TEMPERATURE)
    }

    pub fn radii(&self, flag: Option<Vec<f64>>) -> Vec<f64> {
        flag.or_else(|| self.file.radii.clone())
            .unwrap_or_else(|| combipart::DEFAULT_RADII_KM.to_vec())
    }

    pub fn classes(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.classes).unwrap_or(DEFAULT_MEAN_CLASSES)
    }

    pub fn parallel(&self, flag: bool) -> bool {
        flag || self.file.parallel.unwrap_or(false)
    }
}
