//! Run configuration: a sectioned `key = value` file (TOML syntax).
//!
//! ```text
//! out = "results"
//!
//! [reward]
//! k_easy = 10.0
//! trunc_threshold = 400
//!
//! [grpo]
//! steps = 300
//! seed = 42
//!
//! [env]
//! per_class = 64
//!
//! [simulate]
//! stack = "grdr-adaptive"
//!
//! [annotate]
//! eval_log = "fixtures/relabel_eval_log.csv"
//! ```
//!
//! Every key has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::Cutoffs;
use crate::grpo::GrpoConfig;
use crate::reward::RewardConfig;
use crate::sim::BankProfile;
use crate::train::{SimConfig, StackKind};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error("config `{path}`: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Question-bank source: a bank file, or the seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub bank: Option<PathBuf>,
    pub per_class: usize,
    pub profile: BankProfile,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { bank: None, per_class: 64, profile: BankProfile::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub stack: StackKind,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { stack: StackKind::GrdrAdaptive }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateConfig {
    pub eval_log: Option<PathBuf>,
    /// Optional `question_id,correct,length` file for the grouped report.
    pub outcomes: Option<PathBuf>,
    pub easy_min: usize,
    pub medium_min: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        let c = Cutoffs::default();
        Self { eval_log: None, outcomes: None, easy_min: c.easy_min, medium_min: c.medium_min }
    }
}

impl AnnotateConfig {
    pub fn cutoffs(&self) -> Cutoffs {
        Cutoffs { easy_min: self.easy_min, medium_min: self.medium_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out: PathBuf,
    pub reward: RewardConfig<f64>,
    pub grpo: GrpoConfig<f64>,
    pub sim: SimConfig,
    pub env: EnvConfig,
    pub simulate: SimulateConfig,
    pub annotate: AnnotateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            sim: SimConfig::default(),
            env: EnvConfig::default(),
            simulate: SimulateConfig::default(),
            annotate: AnnotateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::from_toml(&text).map_err(|msg| ConfigError::Parse { path: path.to_path_buf(), msg })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.reward.validate().map_err(|e| inv(&e))?;
        self.grpo.validate().map_err(|e| inv(&e))?;
        Cutoffs::new(self.annotate.easy_min, self.annotate.medium_min).map_err(|e| inv(&e))?;
        if self.env.bank.is_none() && self.env.per_class == 0 {
            return Err(ConfigError::Invalid("env.per_class must be positive".into()));
        }
        Ok(())
    }
}
