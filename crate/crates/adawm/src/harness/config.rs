//! Experiment configuration files: a TOML schema with strict unknown-key
//! rejection and a content digest that ties checkpoints to the exact
//! configuration that produced them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{AdaWMConfig, Strategy};
use crate::agent::ACConfig;
use crate::drivesim::{RewardWeights, TaskConfig, N_ACTIONS, OBS_LEN};
use crate::worldmodel::RssmConfig;

use super::HarnessError;

/// World-model and head sizes; the observation and action widths are fixed
/// by the simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latents: usize,
    pub classes: usize,
    pub h_dim: usize,
    pub hidden: usize,
    /// Rank of the frozen-basis low-rank adapter used during finetuning.
    pub lora_rank: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latents: 4,
            classes: 4,
            h_dim: 12,
            hidden: 16,
            lora_rank: 8,
            actor_hidden: 16,
            critic_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn rssm_config(&self) -> RssmConfig {
        RssmConfig {
            obs_dim: OBS_LEN,
            n_actions: N_ACTIONS,
            latents: self.latents,
            classes: self.classes,
            h_dim: self.h_dim,
            hidden: self.hidden,
            beta_pred: 1.0,
            beta_dyn: 0.5,
            beta_rep: 0.1,
            mean_latent: false,
        }
    }
}

/// Pretraining schedule knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Probability of taking the route-follower action instead of the
    /// policy's, annealed linearly from `assist_start` to `assist_end` over
    /// the budget. Exploration scaffolding for the cold-start phase.
    pub assist_start: f64,
    pub assist_end: f64,
    /// Target speed handed to the route follower while assisting.
    pub assist_speed: f64,
    /// World-model gradient iterations per collected episode.
    pub wm_iters: usize,
    /// Actor-critic gradient iterations per collected episode.
    pub ac_iters: usize,
    /// Sequences per world-model batch.
    pub batch_seqs: usize,
    /// Sequence length cap for sampled windows.
    pub seq_len: usize,
    pub wm_lr: f64,
    /// Actor snapshots taken at evenly spaced points; they become the
    /// sub-units of the finetuning ensemble.
    pub snapshots: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            assist_start: 0.9,
            assist_end: 0.1,
            assist_speed: 3.0,
            wm_iters: 2,
            ac_iters: 1,
            batch_seqs: 4,
            seq_len: 8,
            wm_lr: 3e-4,
            snapshots: 4,
        }
    }
}

/// One experiment: which tasks, which strategy, which seeds, and how long.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in task id, or a path to a task file (`*.toml`).
    pub pretrain_task: String,
    pub finetune_task: String,
    /// One of `adawm`, `model-only`, `policy-only`, `alternate`, `none`.
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    /// Episodes per periodic evaluation.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Evaluate every this many finetune steps (0 disables refreshes).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Episode cap applied to both tasks (0 keeps each task's own limit).
    #[serde(default)]
    pub step_limit: usize,
    pub out_dir: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "ACConfig::desk")]
    pub ac: ACConfig,
    #[serde(default)]
    pub adapt: AdaWMConfig,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

fn default_eval_episodes() -> usize {
    10
}

fn default_eval_every() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &str) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.strategy
            .parse::<Strategy>()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::Config("eval_episodes must be positive".into()));
        }
        for id in [&self.pretrain_task, &self.finetune_task] {
            self.resolve_task(id)?;
        }
        Ok(())
    }

    /// Resolve a task id to its configuration, applying the step-limit cap.
    /// Ids ending in `.toml` are loaded as task files; anything else must
    /// name a built-in archetype.
    pub fn resolve_task(&self, id: &str) -> Result<TaskConfig, HarnessError> {
        let mut task = if id.ends_with(".toml") {
            TaskConfig::from_toml_str(&std::fs::read_to_string(id)?)
                .map_err(HarnessError::Sim)?
        } else {
            TaskConfig::builtin(id).map_err(HarnessError::Sim)?
        };
        if self.step_limit > 0 {
            task.step_limit = self.step_limit;
        }
        Ok(task)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy.parse().expect("validated at construction")
    }

    /// Content digest binding checkpoints to the configuration that wrote
    /// them. Seeds and the output directory are excluded so a sweep's
    /// checkpoints stay interchangeable across seeds and relocatable on
    /// disk; the step budgets are excluded so a finished run can be resumed
    /// under an extended budget; the strategy and adaptation thresholds are
    /// excluded so one pretraining checkpoint serves every finetuning arm,
    /// and the finetune task is excluded because pretraining never sees it.
    pub fn digest(&self) -> [u8; 32] {
        let mut probe = self.clone();
        probe.seeds = Vec::new();
        probe.out_dir = String::new();
        probe.pretrain_steps = 0;
        probe.finetune_steps = 0;
        probe.strategy = String::new();
        probe.finetune_task = String::new();
        probe.adapt = AdaWMConfig::default();
        let json = serde_json::to_string(&probe).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher.finalize().into()
    }
}
