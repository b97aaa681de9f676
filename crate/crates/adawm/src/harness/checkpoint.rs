//! Binary checkpoint persistence. The format is little-endian and
//! documented bit-exactly:
//!
//! ```text
//! magic        4 bytes   "ADWM"
//! version      u32       currently 1
//! step         u64       finetune step the checkpoint was written at
//! global_seed  u64       the run's seed
//! basis_seed   u64       seed regenerating the low-rank adapter basis
//! lora_rank    u64       adapter rank k
//! digest       32 bytes  sha-256 of the producing configuration
//! n_logits     u64       ensemble simplex logits, then that many f64s
//! n_entries    u64       named tensors, each encoded as:
//!   name_len   u64       then that many utf-8 bytes
//!   rank       u64       then `rank` u64 dimensions
//!   numel      u64       product of the dimensions (checked on load)
//!   data       numel f64s, row-major
//! ```
//!
//! Entry name prefixes: `wm.` pretrained world-model tensors, `lora.`
//! adapter coefficients, `pol.` ensemble sub-units, `cri.`/`slow.` fast and
//! slow critic weights, `snap.` the frozen pretraining policy.

use std::collections::BTreeMap;
use std::path::Path;

use crate::adapt::AdaptState;
use crate::agent::{Critic, PolicyEnsemble};
use crate::numkernel::{ParamSet, Tensor};
use crate::worldmodel::{Rssm, RssmLora};

use super::{ExperimentConfig, HarnessError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ADWM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything persisted between runs. The replay buffer is deliberately
/// not included: resumed runs re-collect experience, which the per-step
/// reseeding makes reproducible anyway.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub global_seed: u64,
    pub basis_seed: u64,
    pub lora_rank: u64,
    pub digest: [u8; 32],
    /// `ens.logits` of the live ensemble.
    pub logits: Vec<f64>,
    pub entries: BTreeMap<String, Tensor>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential little-endian reader over a checkpoint byte buffer.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        let end = self.pos.checked_add(n).ok_or(HarnessError::Truncated)?;
        if end > self.buf.len() {
            return Err(HarnessError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, HarnessError> {
        let raw = self.take(n.checked_mul(8).ok_or(HarnessError::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.global_seed);
        put_u64(&mut out, self.basis_seed);
        put_u64(&mut out, self.lora_rank);
        out.extend_from_slice(&self.digest);
        put_u64(&mut out, self.logits.len() as u64);
        put_f64s(&mut out, &self.logits);
        put_u64(&mut out, self.entries.len() as u64);
        for (name, t) in &self.entries {
            put_u64(&mut out, name.len() as u64);
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, t.shape().len() as u64);
            for d in t.shape() {
                put_u64(&mut out, *d as u64);
            }
            put_u64(&mut out, t.numel() as u64);
            put_f64s(&mut out, t.data());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, HarnessError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(HarnessError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(HarnessError::BadVersion { found: version });
        }
        let step = r.u64()?;
        let global_seed = r.u64()?;
        let basis_seed = r.u64()?;
        let lora_rank = r.u64()?;
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let n_logits = r.u64()? as usize;
        let logits = r.f64s(n_logits)?;
        let n_entries = r.u64()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n_entries {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| HarnessError::Truncated)?;
            let rank = r.u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel = r.u64()? as usize;
            if shape.iter().product::<usize>() != numel {
                return Err(HarnessError::Truncated);
            }
            let data = r.f64s(numel)?;
            let tensor = Tensor::new(shape, data).map_err(|_| HarnessError::Truncated)?;
            entries.insert(name, tensor);
        }
        if r.pos != buf.len() {
            return Err(HarnessError::Truncated);
        }
        Ok(Self { step, global_seed, basis_seed, lora_rank, digest, logits, entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Capture the full adaptation state.
    pub fn from_adapt_state(
        state: &AdaptState,
        step: u64,
        global_seed: u64,
        digest: [u8; 32],
    ) -> Self {
        let mut entries = BTreeMap::new();
        for (name, p) in state.lora.base.iter() {
            entries.insert(format!("wm.{name}"), p.value.clone());
        }
        for (name, p) in state.lora.coeffs.iter() {
            // coefficient names already carry the `lora.` prefix
            entries.insert(name.clone(), p.value.clone());
        }
        let mut logits = Vec::new();
        for (name, p) in state.ensemble.params.iter() {
            if name == "ens.logits" {
                logits = p.value.data().to_vec();
            } else {
                entries.insert(format!("pol.{name}"), p.value.clone());
            }
        }
        for (name, p) in state.critic.params.iter() {
            entries.insert(name.clone(), p.value.clone());
        }
        for (name, p) in state.critic.slow.iter() {
            entries.insert(format!("slow.{}", name.strip_prefix("cri.").unwrap_or(name)), p.value.clone());
        }
        for (name, p) in state.snapshot.params.iter() {
            entries.insert(format!("snap.{name}"), p.value.clone());
        }
        Self {
            step,
            global_seed,
            basis_seed: state.lora.seed,
            lora_rank: state.lora.k as u64,
            digest,
            logits,
            entries,
        }
    }

    fn take_prefixed(&self, prefix: &str) -> Result<ParamSet, HarnessError> {
        let mut out = ParamSet::new();
        for (name, t) in &self.entries {
            if let Some(stripped) = name.strip_prefix(prefix) {
                out.insert(stripped, t.clone(), true)
                    .map_err(HarnessError::Kernel)?;
            }
        }
        if out.is_empty() {
            return Err(HarnessError::MissingEntry(prefix.to_string()));
        }
        Ok(out)
    }

    fn rebuild_ensemble(
        &self,
        unit_params: ParamSet,
        logits: &[f64],
        x_dim: usize,
        hidden: usize,
        n_actions: usize,
    ) -> Result<PolicyEnsemble, HarnessError> {
        let d = logits.len();
        if d == 0 {
            return Err(HarnessError::MissingEntry("ens.logits".into()));
        }
        let mut subunits = Vec::with_capacity(d);
        for i in 0..d {
            let mut unit = ParamSet::new();
            for (name, p) in unit_params.iter() {
                if let Some(stripped) = name.strip_prefix(&format!("sub{i}.")) {
                    unit.insert(stripped, p.value.clone(), true)
                        .map_err(HarnessError::Kernel)?;
                }
            }
            subunits.push(unit);
        }
        let mut ens = PolicyEnsemble::from_subunits(x_dim, hidden, n_actions, subunits)
            .map_err(HarnessError::Agent)?;
        ens.params
            .set_value("ens.logits", Tensor::vector(logits.to_vec()))
            .map_err(HarnessError::Kernel)?;
        Ok(ens)
    }

    /// Reconstruct the adaptation state under `cfg`'s model shape. The
    /// replay buffer starts empty and the episode counter resumes at the
    /// stored step.
    pub fn to_adapt_state(&self, cfg: &ExperimentConfig) -> Result<AdaptState, HarnessError> {
        if self.digest != cfg.digest() {
            return Err(HarnessError::DigestMismatch);
        }
        let rssm = Rssm::new(cfg.model.rssm_config());
        let x_dim = rssm.cfg.x_dim();
        let n_actions = rssm.cfg.n_actions;

        let base = self.take_prefixed("wm.")?;
        let mut coeffs = ParamSet::new();
        for (name, t) in &self.entries {
            if name.starts_with("lora.") {
                coeffs
                    .insert(name, t.clone(), true)
                    .map_err(HarnessError::Kernel)?;
            }
        }
        let lora = RssmLora::from_parts(base, coeffs, self.lora_rank as usize, self.basis_seed)
            .map_err(HarnessError::Wm)?;

        let pol = self.take_prefixed("pol.")?;
        let ensemble =
            self.rebuild_ensemble(pol, &self.logits, x_dim, cfg.model.actor_hidden, n_actions)?;

        let mut critic = Critic::new(x_dim, cfg.model.critic_hidden, 0);
        let fast = self.take_prefixed("cri.")?;
        for (name, p) in fast.iter() {
            critic
                .params
                .set_value(&format!("cri.{name}"), p.value.clone())
                .map_err(HarnessError::Kernel)?;
        }
        let slow = self.take_prefixed("slow.")?;
        for (name, p) in slow.iter() {
            critic
                .slow
                .set_value(&format!("cri.{name}"), p.value.clone())
                .map_err(HarnessError::Kernel)?;
        }

        let snap = self.take_prefixed("snap.")?;
        let snap_logits = snap.value("ens.logits").map_err(HarnessError::Kernel)?.data().to_vec();
        let snapshot =
            self.rebuild_ensemble(snap, &snap_logits, x_dim, cfg.model.actor_hidden, n_actions)?;

        let mut state = AdaptState::new(
            rssm,
            lora,
            ensemble,
            critic,
            crate::adapt::ReplayBuffer::DEFAULT_CAPACITY,
        );
        state.snapshot = snapshot;
        state.episodes = self.step;
        Ok(state)
    }
}
