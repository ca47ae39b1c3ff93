//! Experiment configuration: one strict-schema JSON file covering every
//! module. Unknown keys are rejected so a typo cannot silently change an
//! experiment.

use crate::dae::{DaeConfig, TrainOptions};
use crate::error::{Error, Result};
use crate::gripperworld::{DatasetConfig, TaskKind};
use crate::probing::ProbeConfig;
use crate::worldpolicy::{PolicyConfig, PolicyTrainOptions};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub tasks: Vec<String>,
    pub trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tasks: TaskKind::ALL.iter().map(|t| t.name().to_string()).collect(),
            trials: 20,
        }
    }
}

impl EvalConfig {
    pub fn task_kinds(&self) -> Result<Vec<TaskKind>> {
        self.tasks.iter().map(|t| TaskKind::parse(t)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub steps: usize,
    pub n_images: usize,
    pub noise_seed: u64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig { steps: 50, n_images: 8, noise_seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DatasetConfig,
    pub dae: DaeConfig,
    pub dae_train: TrainOptions,
    pub probe: ProbeConfig,
    pub policy: PolicyConfig,
    pub policy_train: PolicyTrainOptions,
    pub eval: EvalConfig,
    pub reconstruct: ReconstructConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DatasetConfig::default(),
            dae: DaeConfig::default(),
            dae_train: TrainOptions::default(),
            probe: ProbeConfig::default(),
            policy: PolicyConfig::default(),
            policy_train: PolicyTrainOptions::default(),
            eval: EvalConfig::default(),
            reconstruct: ReconstructConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Published training profile: batch 512, lr 3e-5, weight decay 1e-3,
    /// seed 33, and two 1024-wide tokens.
    pub fn apply_paper_scale(&mut self) {
        self.dae_train = self.dae_train.clone().paper_scale();
        self.dae.compressor.token_count = 2;
        self.dae.compressor.token_dim = 1024;
        self.dae.init_seed = 33;
        self.policy.state_token_dim = 1024;
        self.probe.samples_per_horizon = 20_000;
    }

    /// Override every module seed from one root.
    pub fn apply_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.dae_train.seed = seed;
        self.probe.seed = seed;
        self.policy_train.seed = seed;
        self.policy.init_seed = seed;
    }
}
