use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::teb::{TebConfig, TebModel};
use crate::demand::NormStats;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained predictor together with everything needed to reproduce its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Checkpoint<T: Scalar> {
    pub version: u32,
    pub model: TebModel<T>,
    /// Statistics of the `D` input features.
    pub feature_stats: NormStats<T>,
    /// Statistics of the `m` prediction targets.
    pub label_stats: NormStats<T>,
    /// Free-form provenance (strategy, seeds, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: TebModel<T>, feature_stats: NormStats<T>, label_stats: NormStats<T>) -> Result<Self> {
        let ck = Self {
            version: CHECKPOINT_VERSION,
            model,
            feature_stats,
            label_stats,
            meta: BTreeMap::new(),
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn config(&self) -> &TebConfig {
        &self.model.config
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let cfg = &self.model.config;
        cfg.validate()?;
        self.model.params.check_shapes(cfg)?;
        if self.feature_stats.dim() != cfg.input_dim || self.feature_stats.std.len() != cfg.input_dim {
            return Err(Error::CheckpointMismatch(format!(
                "feature statistics have {} dims, model expects {}",
                self.feature_stats.dim(),
                cfg.input_dim
            )));
        }
        if self.label_stats.dim() != cfg.n_tasks || self.label_stats.std.len() != cfg.n_tasks {
            return Err(Error::CheckpointMismatch(format!(
                "label statistics have {} dims, model has {} tasks",
                self.label_stats.dim(),
                cfg.n_tasks
            )));
        }
        if !self.model.params.all_finite() {
            return Err(Error::CheckpointMismatch("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        ck.validate()?;
        Ok(ck)
    }

    /// Loads and refuses anything whose architecture differs from `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &TebConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config() != expected {
            return Err(Error::CheckpointMismatch(format!(
                "architecture {:?} does not match expected {:?}",
                ck.config(),
                expected
            )));
        }
        Ok(ck)
    }
}
