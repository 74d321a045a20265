//! Experiment configuration: one structured document (TOML or JSON) that
//! fans out sub-configs to the modules that own them.
//!
//! The config hash is the SHA-256 of the canonical JSON serialization of
//! the *parsed* structure, so semantically identical files (key reordering,
//! formatting) hash identically and run directories are reproducible.

use crate::cold_start::{DifficultyMix, SftConfig};
use crate::error::{CoreError, Result};
use crate::eval::EvalConfig;
use crate::grpo::RlConfig;
use crate::reward::RewardConfig;
use crate::rollout::RolloutShape;
use crate::task::DomainConfig;
use crate::vocab::hex_string;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// Policy-table shape and sampling temperature for training rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Number of trailing tokens forming a context.
    pub context_order: usize,
    /// Rollout sampling temperature.
    pub temperature: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            context_order: 3,
            temperature: 1.0,
        }
    }
}

/// Difficulty weights in a TOML-friendly shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskMixConfig {
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

impl Default for TaskMixConfig {
    fn default() -> Self {
        Self {
            d2: 0.5,
            d3: 0.5,
            d4: 0.0,
        }
    }
}

impl TaskMixConfig {
    pub fn to_mix(self) -> DifficultyMix {
        let mut map = BTreeMap::new();
        for (d, w) in [(2, self.d2), (3, self.d3), (4, self.d4)] {
            if w > 0.0 {
                map.insert(d, w);
            }
        }
        DifficultyMix(map)
    }
}

/// Component ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Zero the analytic plan reward in every breakdown.
    pub disable_analytic: bool,
    /// Zero the structure and length components in every breakdown.
    pub disable_format: bool,
    /// Skip the supervised cold start; optimize from the uniform policy.
    pub skip_sft: bool,
}

/// The full experiment surface. Every module receives only its sub-config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub domain: DomainConfig,
    pub policy: PolicyConfig,
    pub task_mix: TaskMixConfig,
    pub sft: SftConfig,
    pub reward: RewardConfig,
    pub rl: RlConfig,
    pub rollout: RolloutShape,
    pub eval: EvalConfig,
    pub ablation: AblationFlags,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CoreError::Toml(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Parses a config file by extension (`.toml` or `.json`).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// 12-hex-character hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())[..12].to_string()
    }

    pub fn mix(&self) -> DifficultyMix {
        self.task_mix.to_mix()
    }

    /// Reward config with the ablation switches folded in.
    pub fn effective_reward(&self) -> RewardConfig {
        let mut reward = self.reward.clone();
        if self.ablation.disable_analytic {
            reward.analytic_enabled = false;
        }
        if self.ablation.disable_format {
            reward.format_enabled = false;
        }
        reward
    }

    pub fn validate(&self) -> Result<()> {
        if self.policy.context_order == 0 {
            return Err(CoreError::Config(
                "policy.context_order must be >= 1".into(),
            ));
        }
        if !self.policy.temperature.is_finite() || self.policy.temperature <= 0.0 {
            return Err(CoreError::Config(
                "policy.temperature must be positive".into(),
            ));
        }
        if self.domain.modulus < 2 {
            return Err(CoreError::Config("domain.modulus must be >= 2".into()));
        }
        if self.mix().0.is_empty() {
            return Err(CoreError::Config("task_mix has no positive weights".into()));
        }
        if self.mix().0.keys().any(|&d| !(2..=4).contains(&d)) {
            return Err(CoreError::Config(
                "task difficulties must lie in 2..=4".into(),
            ));
        }
        if self.reward.t_max <= self.rollout.max_response_len() {
            return Err(CoreError::Config(format!(
                "reward.t_max ({}) must exceed the maximum response length ({})",
                self.reward.t_max,
                self.rollout.max_response_len()
            )));
        }
        if self.rollout.m == 0 || self.rollout.z == 0 {
            return Err(CoreError::Config(
                "rollout.m and rollout.z must be >= 1".into(),
            ));
        }
        let max_k = self.eval.k_list.iter().copied().max().unwrap_or(1);
        if max_k > self.eval.n_samples {
            return Err(CoreError::Config(format!(
                "eval.k_list contains {max_k} > n_samples = {}",
                self.eval.n_samples
            )));
        }
        self.rl.validate()?;
        Ok(())
    }
}
