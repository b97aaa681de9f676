//! Experiment orchestration: configuration files, binary checkpoints,
//! metrics CSVs, pretrain/finetune pipelines, gradient-check sweeps, and
//! self-contained learning-curve figures.

pub mod checkpoint;
pub mod config;
pub mod curves;
pub mod metrics;
pub mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ExperimentConfig, ModelConfig, PretrainConfig};
pub use curves::export_curves;
pub use metrics::{read_metrics, MetricsRow, METRICS_HEADER};
pub use run::{gradcheck_suite, run_eval, run_finetune, run_pretrain};

use thiserror::Error;

use crate::adapt::AdaptError;
use crate::agent::AgentError;
use crate::drivesim::SimError;
use crate::numkernel::KernelError;
use crate::worldmodel::WmError;

/// Harness failure modes.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Wm(#[from] WmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("checkpoint has wrong magic bytes")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported")]
    BadVersion { found: u32 },
    #[error("checkpoint file is truncated or corrupt")]
    Truncated,
    #[error("checkpoint was written under a different configuration")]
    DigestMismatch,
    #[error("checkpoint is missing parameter {0:?}")]
    MissingEntry(String),
    #[error("no metrics rows to plot")]
    EmptyMetrics,
    #[error("malformed metrics row: {0}")]
    BadMetrics(String),
}
