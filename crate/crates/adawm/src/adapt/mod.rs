//! The adaptation loop: collect new-task experience, estimate dynamics and
//! policy mismatches as total-variation distances, apply the threshold rule,
//! and finetune exactly one component — low-rank model coefficients or
//! policy-ensemble weights — per step.

pub mod buffer;
pub mod mismatch;
pub mod strategy;

pub use buffer::{BufferRole, ReplayBuffer, Transition};
pub use mismatch::{
    boltzmann, decide, estimate_dynamics_mismatch, mean_row_tv, one_step_action_values,
    policy_mismatch_qboltzmann, policy_mismatch_snapshot, tabular_dynamics_estimate,
    tabular_policy_estimate, tv_categorical, AdaWMConfig, MismatchReport, PolicyRefMode,
};
pub use strategy::{
    adawm_step, collect_episode, collect_episode_with, evaluate_agent, evaluate_agent_with,
    run_strategy, run_strategy_from, AdaptState, Dispatch, EpisodeStats, FinetuneOpts, Strategy,
    StrategyRow,
};

use thiserror::Error;

use crate::agent::AgentError;
use crate::drivesim::SimError;
use crate::numkernel::KernelError;
use crate::theory::TheoryError;
use crate::worldmodel::WmError;

/// Adaptation failure modes.
#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Wm(#[from] WmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("not enough stored experience to sample from")]
    EmptyBuffer,
    #[error("distributions have mismatched support: {p} vs {q}")]
    SupportMismatch { p: usize, q: usize },
    #[error("unknown finetuning strategy {0:?}")]
    UnknownStrategy(String),
    #[error("per-row callback failed: {0}")]
    Callback(String),
}
