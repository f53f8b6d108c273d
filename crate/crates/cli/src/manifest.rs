use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What produced an output directory. Deliberately free of timestamps so
/// that reruns with the same configuration produce identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub city: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ScenarioConfig) -> Self {
        Self {
            command: command.into(),
            city: cfg.city.name().into(),
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
