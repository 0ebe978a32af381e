//! Experiment configuration file (TOML). Every section is optional; missing
//! keys take their defaults and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demorpher::DemorphConfig;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_FMR_TARGETS;
use crate::latentcodec::CodecConfig;
use crate::protocol::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Toy-face corpus directory (holds `registry.json`).
    pub data: PathBuf,
    /// Morph dataset directory (holds `train.jsonl` and `test.jsonl`).
    pub morphs: PathBuf,
    pub codec: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data/faces".into(),
            morphs: "data/morphs".into(),
            codec: "runs/codec.ckpt".into(),
            checkpoint: "runs/demorpher.ckpt".into(),
            reports: "runs/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub fmr_targets: Vec<f64>,
    /// `toy` or the path of an embedding file.
    pub provider: String,
    pub paths: PathsConfig,
    pub codec: CodecConfig,
    pub demorpher: DemorphConfig,
}

pub const TOY_PROVIDER_NAME: &str = "toy";

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: Scenario::Disjoint,
            fmr_targets: DEFAULT_FMR_TARGETS.to_vec(),
            provider: TOY_PROVIDER_NAME.into(),
            paths: PathsConfig::default(),
            codec: CodecConfig::default(),
            demorpher: DemorphConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fmr_targets.is_empty() {
            return Err(Error::validation("fmr_targets", "need at least one target"));
        }
        if let Some(f) = self.fmr_targets.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::validation("fmr_targets", format!("{f} outside (0, 1]")));
        }
        if self.provider.trim().is_empty() {
            return Err(Error::validation("provider", "must not be empty"));
        }
        self.codec.validate()?;
        self.demorpher.validate()
    }

    /// Parses and validates TOML text; `origin` is used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::parse(&text, path)
}
