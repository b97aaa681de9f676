//! FIFO replay storage for environment transitions, with episode-aware
//! sequence sampling for world-model training.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::worldmodel::Sequence;

use super::AdaptError;

/// Which phase a buffer's data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferRole {
    /// Pretraining data (the paper's B).
    Pretrain,
    /// New-task data collected during finetuning (the paper's W).
    NewTask,
}

/// One environment transition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// 1.0 while the episode continues, 0.0 on the final transition.
    pub cont: f64,
    pub episode: u64,
}

/// Ring buffer with FIFO eviction at capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: VecDeque<Transition>,
    capacity: usize,
    pub role: BufferRole,
}

impl ReplayBuffer {
    /// Default capacity: the usual million-transition budget scaled down a
    /// decade for desk-scale runs.
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize, role: BufferRole) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { data: VecDeque::new(), capacity, role }
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    /// Index ranges of maximal same-episode runs, oldest first.
    fn episode_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=self.data.len() {
            if i == self.data.len() || self.data[i].episode != self.data[start].episode {
                runs.push((start, i));
                start = i;
            }
        }
        runs
    }

    /// Sample `count` training sequences of length `2..=max_len`, each a
    /// contiguous window inside one episode. Episodes shorter than two
    /// transitions are skipped.
    pub fn sample_sequences(
        &self,
        count: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Sequence>, AdaptError> {
        let runs: Vec<(usize, usize)> = self
            .episode_runs()
            .into_iter()
            .filter(|(a, b)| b - a >= 2)
            .collect();
        if runs.is_empty() {
            return Err(AdaptError::EmptyBuffer);
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let (a, b) = runs[rng.gen_range(0..runs.len())];
            let len = (b - a).min(max_len.max(2));
            let window = rng.gen_range(2..=len);
            let start = rng.gen_range(a..=b - window);
            let mut obs = Vec::with_capacity(window);
            let mut actions = Vec::with_capacity(window);
            let mut rewards = Vec::with_capacity(window);
            let mut continues = Vec::with_capacity(window);
            for i in start..start + window {
                let t = &self.data[i];
                obs.push(t.obs.clone());
                actions.push(t.action);
                rewards.push(t.reward);
                continues.push(t.cont);
            }
            out.push(Sequence { obs, actions, rewards, continues });
        }
        Ok(out)
    }

    /// Sample `count` contiguous windows of transitions (cloned), for
    /// mismatch estimation by filtering. Windows have length `2..=max_len`.
    pub fn sample_windows(
        &self,
        count: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<Transition>>, AdaptError> {
        let seqs = self.sample_sequences(count, max_len, rng)?;
        // reuse the same sampling; repackage as transitions
        Ok(seqs
            .into_iter()
            .map(|s| {
                (0..s.len())
                    .map(|t| Transition {
                        obs: s.obs[t].clone(),
                        action: s.actions[t],
                        reward: s.rewards[t],
                        cont: s.continues[t],
                        episode: 0,
                    })
                    .collect()
            })
            .collect())
    }
}
