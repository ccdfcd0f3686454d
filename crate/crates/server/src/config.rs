//! Instance configuration file.

use std::path::{Path, PathBuf};

use refhub_core::InstanceId;
use serde::{Deserialize, Serialize};

use crate::ServeError;

fn default_listen() -> String {
    "127.0.0.1:7000".into()
}

fn default_min_sample() -> u64 {
    refhub_core::exosource::MIN_SAMPLE
}

fn default_warn_rate() -> u32 {
    30
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub source: String,
    pub path: PathBuf,
}

/// Paths are relative to the configuration file's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub instance: InstanceId,
    pub log: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default, rename = "dictionary")]
    pub dictionaries: Vec<DictionaryEntry>,
    #[serde(default)]
    pub contracts: Vec<PathBuf>,
    #[serde(default = "default_min_sample")]
    pub min_sample: u64,
    /// Anonymous warnings accepted per session and minute.
    #[serde(default = "default_warn_rate")]
    pub warn_per_minute: u32,
}

impl InstanceConfig {
    pub fn new(instance: InstanceId, log: PathBuf) -> Self {
        Self {
            instance,
            log,
            listen: default_listen(),
            snapshot: None,
            rules: None,
            dictionaries: Vec::new(),
            contracts: Vec::new(),
            min_sample: default_min_sample(),
            warn_per_minute: default_warn_rate(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ServeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ServeError::Config(e.to_string()))?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.log);
        if let Some(p) = self.snapshot.as_mut() {
            fix(p);
        }
        if let Some(p) = self.rules.as_mut() {
            fix(p);
        }
        for d in &mut self.dictionaries {
            fix(&mut d.path);
        }
        for c in &mut self.contracts {
            fix(c);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Every referenced input file must be readable before the hub starts.
    pub fn check_readable(&self) -> Result<(), ServeError> {
        let inputs = self
            .rules
            .iter()
            .chain(self.dictionaries.iter().map(|d| &d.path))
            .chain(self.contracts.iter())
            .chain(self.snapshot.iter());
        for p in inputs {
            std::fs::metadata(p).map_err(|e| ServeError::Config(format!("{}: {e}", p.display())))?;
        }
        Ok(())
    }
}
