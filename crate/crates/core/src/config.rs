//! Serializable run configuration for scoring a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Measure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Manifest to score; required before a run starts.
    pub manifest: Option<PathBuf>,
    /// Measures to compute, all four by default.
    pub measures: Vec<Measure>,
    pub seed: u64,
    /// Output directory for the report files.
    pub out: PathBuf,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            measures: Measure::ALL.to_vec(),
            seed: 0,
            out: PathBuf::from("out"),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; absent fields keep their defaults and relative
    /// paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.measures.is_empty() {
            return Err(Error::Config("no measures selected".into()));
        }
        for (i, m) in self.measures.iter().enumerate() {
            if self.measures[..i].contains(m) {
                return Err(Error::Config(format!("measure {m} listed twice")));
            }
        }
        self.eval.validate()
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest path given".into()))
    }
}

/// Parses a comma-separated measure list such as `l2,svs`.
pub fn parse_measures(list: &str) -> Result<Vec<Measure>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}
