//! Actor-critic over model states: a convex policy ensemble acting on the
//! world model's latent representation, a value critic with a slow EMA copy,
//! bootstrapped λ-return targets, and a literal K-step lookahead value.

pub mod critic;
pub mod ensemble;

pub use critic::{critic_update, lookahead_value, Critic, CriticLoss};
pub use ensemble::{actor_shapes, actor_update, PolicyEnsemble, UpdateMode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkernel::KernelError;
use crate::worldmodel::WmError;

/// Agent failure modes.
#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Wm(#[from] WmError),
    #[error("sequence lengths differ: rewards {rewards}, values {values}, continues {continues}")]
    LengthMismatch {
        rewards: usize,
        values: usize,
        continues: usize,
    },
    #[error("sequences must have at least one element")]
    EmptySequence,
    #[error("imagined trajectory has no steps")]
    EmptyTrajectory,
    #[error("sub-unit parameter {name:?} has the wrong shape")]
    SubunitShape { name: String },
}

/// Actor-critic hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ACConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Imagination horizon for value targets and lookahead.
    pub horizon: usize,
    /// Entropy bonus scale.
    pub eta: f64,
    /// Decay of the critic's slow copy.
    pub ema_decay: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
}

impl ACConfig {
    /// Desk-scale defaults: long discount horizon, 15-step imagination.
    pub fn desk() -> Self {
        Self {
            gamma: 0.997,
            lambda: 0.95,
            horizon: 15,
            eta: 3e-4,
            ema_decay: 0.98,
            actor_lr: 3e-5,
            critic_lr: 3e-5,
            adam_eps: 1e-5,
            grad_clip: 100.0,
        }
    }

    /// Faster profile for constrained runs: shorter horizon, smaller γ.
    pub fn fast() -> Self {
        Self {
            gamma: 0.99,
            horizon: 5,
            ..Self::desk()
        }
    }
}

/// Bootstrapped λ-returns by backward recursion.
///
/// All three slices share length `T`; entries `t < T-1` feed the recursion
/// and `values[T-1]` seeds it (`R_{T-1} = v(s_{T-1})`), so the final reward
/// and continue entries are unused:
/// `R_t = r_t + γ c_t ((1-λ) v(s_{t+1}) + λ R_{t+1})`.
pub fn lambda_returns(
    rewards: &[f64],
    values: &[f64],
    continues: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, AgentError> {
    let t_len = values.len();
    if rewards.len() != t_len || continues.len() != t_len {
        return Err(AgentError::LengthMismatch {
            rewards: rewards.len(),
            values: t_len,
            continues: continues.len(),
        });
    }
    if t_len == 0 {
        return Err(AgentError::EmptySequence);
    }
    let mut out = vec![0.0; t_len];
    out[t_len - 1] = values[t_len - 1];
    for t in (0..t_len - 1).rev() {
        out[t] = rewards[t]
            + gamma * continues[t] * ((1.0 - lambda) * values[t + 1] + lambda * out[t + 1]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent forward expansion of the recursion, computed top-down.
    fn brute_force_return(
        t: usize,
        rewards: &[f64],
        values: &[f64],
        continues: &[f64],
        gamma: f64,
        lambda: f64,
    ) -> f64 {
        if t == values.len() - 1 {
            return values[t];
        }
        rewards[t]
            + gamma
                * continues[t]
                * ((1.0 - lambda) * values[t + 1]
                    + lambda * brute_force_return(t + 1, rewards, values, continues, gamma, lambda))
    }

    #[test]
    fn terminal_only_is_the_value() {
        let r = lambda_returns(&[3.0], &[1.25], &[1.0], 0.9, 0.95).unwrap();
        assert_eq!(r, vec![1.25]);
    }

    #[test]
    fn lambda_zero_collapses_to_one_step() {
        let rewards = [0.5, -1.0, 2.0];
        let values = [0.1, 0.2, 0.3];
        let continues = [1.0, 0.5, 1.0];
        let gamma = 0.9;
        let r = lambda_returns(&rewards, &values, &continues, gamma, 0.0).unwrap();
        for t in 0..2 {
            let want = rewards[t] + gamma * continues[t] * values[t + 1];
            assert!((r[t] - want).abs() < 1e-15);
        }
        assert_eq!(r[2], values[2]);
    }

    #[test]
    fn length_four_matches_brute_force() {
        let rewards = [1.0, -0.5, 0.25, 9.0];
        let values = [0.4, 0.1, -0.2, 0.7];
        let continues = [1.0, 1.0, 0.0, 1.0];
        let r = lambda_returns(&rewards, &values, &continues, 0.9, 0.95).unwrap();
        for t in 0..4 {
            let want = brute_force_return(t, &rewards, &values, &continues, 0.9, 0.95);
            assert!((r[t] - want).abs() < 1e-12, "t={t}: {} vs {want}", r[t]);
        }
    }

    #[test]
    fn randomized_sequences_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..1000 {
            let t_len = rng.gen_range(1..=10);
            let rewards: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let continues: Vec<f64> = (0..t_len).map(|_| rng.gen_range(0.0..1.0)).collect();
            let gamma = rng.gen_range(0.0..1.0);
            let lambda = rng.gen_range(0.0..=1.0);
            let r = lambda_returns(&rewards, &values, &continues, gamma, lambda).unwrap();
            for t in 0..t_len {
                let want = brute_force_return(t, &rewards, &values, &continues, gamma, lambda);
                assert!(
                    (r[t] - want).abs() <= 1e-10,
                    "case {case}, t={t}: {} vs {want}",
                    r[t]
                );
            }
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(
            lambda_returns(&[1.0, 2.0], &[1.0], &[1.0], 0.9, 0.95),
            Err(AgentError::LengthMismatch { .. })
        ));
        assert!(matches!(
            lambda_returns(&[], &[], &[], 0.9, 0.95),
            Err(AgentError::EmptySequence)
        ));
    }
}
