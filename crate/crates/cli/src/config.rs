//! Run configuration: built-in defaults, optionally overlaid by a JSON file
//! and then by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use occbench::baselines::PENULTIMATE;
use occbench::hopfield::StorageRule;
use occbench::synthgen::{DataConfig, Split};
use occbench::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    /// Number of subpart clusters.
    pub k: usize,
    pub tau: f32,
    pub epochs: usize,
    pub lr: f32,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            k: 32,
            tau: 0.1,
            epochs: 3,
            lr: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub dropout: f32,
    pub epochs: usize,
    pub lr: f32,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            dropout: 0.1,
            epochs: 5,
            lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridSection {
    /// Hopfield nodes; equals the CNN penultimate width.
    pub n: usize,
    pub storage_rule: StorageRule,
    pub storage_ratio: f64,
    pub max_steps: usize,
}

impl Default for HybridSection {
    fn default() -> Self {
        Self {
            n: PENULTIMATE,
            storage_rule: StorageRule::default(),
            storage_ratio: occbench::hopfield::STORAGE_RATIO,
            max_steps: occbench::hopfield::MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub epochs: usize,
    pub lr: f32,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub splits: Vec<Split>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            splits: vec![Split::TestClean, Split::TestOccluded, Split::TestMasked],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub hybrid: HybridSection,
    pub baseline: BaselineSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses a config document; absent keys keep their defaults and
    /// unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    /// Defaults, overlaid by `file` when given, then by `seed`.
    pub fn resolve(file: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.data.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.data.seed
    }

    pub fn validate(&self) -> Result<()> {
        if self.hybrid.n != PENULTIMATE {
            return Err(Error::InvalidArgument(format!(
                "hybrid.n must equal the CNN penultimate width {PENULTIMATE}, got {}",
                self.hybrid.n
            )));
        }
        if !(self.hybrid.storage_ratio > 0.0 && self.hybrid.storage_ratio <= 1.0) {
            return Err(Error::InvalidArgument(
                "hybrid.storage_ratio must be in (0,1]".into(),
            ));
        }
        if self.stage1.k < 2 || self.stage1.tau.is_nan() || self.stage1.tau <= 0.0 {
            return Err(Error::InvalidArgument(
                "stage1 needs k >= 2 and tau > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.stage2.dropout) {
            return Err(Error::InvalidArgument(
                "stage2.dropout must be in [0,1)".into(),
            ));
        }
        if self.eval.splits.contains(&Split::Train) {
            return Err(Error::InvalidArgument(
                "eval.splits may only name test splits".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
