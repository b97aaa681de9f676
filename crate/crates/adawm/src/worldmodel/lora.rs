//! Low-rank adaptation with a frozen random basis: every pretrained matrix
//! is reparameterized as `base + sum_j coeff_j * basis_j` where the basis
//! tensors are regenerated exactly from a seed and only the coefficient
//! vectors are trainable.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::numkernel::Graph;
use crate::numkernel::Adam;
use crate::numkernel::ParamSet;
use crate::numkernel::{randn_tensor, Tensor};

use super::rssm::{Rssm, Sequence, WmLossValues};
use super::{ParamNodes, WmError};

/// Deterministic per-tensor basis seed: hash of the adapter seed and the
/// parameter name.
fn tensor_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Regenerate the frozen basis for one parameter tensor.
pub fn basis_for(seed: u64, name: &str, shape: &[usize], k: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(tensor_seed(seed, name));
    // scale so a unit coefficient perturbs roughly like a fresh glorot draw
    let fan: f64 = if shape.len() == 2 {
        2.0 / (shape[0] + shape[1]) as f64
    } else {
        1.0 / shape[0] as f64
    };
    let std = (fan / k as f64).sqrt();
    (0..k).map(|_| randn_tensor(&mut rng, shape, std)).collect()
}

/// A frozen pretrained parameter set plus trainable low-rank coefficients.
#[derive(Debug, Clone)]
pub struct RssmLora {
    /// Pretrained weights, marked non-trainable.
    pub base: ParamSet,
    /// One `lora.<name>` coefficient vector of length `k` per base tensor.
    pub coeffs: ParamSet,
    pub k: usize,
    pub seed: u64,
    basis: BTreeMap<String, Arc<Vec<Tensor>>>,
}

impl RssmLora {
    /// Wrap a pretrained parameter set. Coefficients start at zero, so the
    /// effective model is exactly the base.
    pub fn new(mut base: ParamSet, k: usize, seed: u64) -> Result<Self, WmError> {
        if k == 0 {
            return Err(WmError::BadRank);
        }
        base.set_all_trainable(false);
        let mut coeffs = ParamSet::new();
        let mut basis = BTreeMap::new();
        let names: Vec<String> = base.names().cloned().collect();
        for name in names {
            let shape = base.value(&name)?.shape().to_vec();
            coeffs.insert(&format!("lora.{name}"), Tensor::vector(vec![0.0; k]), true)?;
            basis.insert(name.clone(), Arc::new(basis_for(seed, &name, &shape, k)));
        }
        Ok(Self { base, coeffs, k, seed, basis })
    }

    /// Restore an adapter from its persisted pieces, regenerating the basis.
    pub fn from_parts(mut base: ParamSet, coeffs: ParamSet, k: usize, seed: u64) -> Result<Self, WmError> {
        if k == 0 {
            return Err(WmError::BadRank);
        }
        base.set_all_trainable(false);
        let mut basis = BTreeMap::new();
        let names: Vec<String> = base.names().cloned().collect();
        for name in names {
            let c = coeffs.value(&format!("lora.{name}"))?;
            if c.numel() != k {
                return Err(WmError::BadRank);
            }
            let shape = base.value(&name)?.shape().to_vec();
            basis.insert(name.clone(), Arc::new(basis_for(seed, &name, &shape, k)));
        }
        Ok(Self { base, coeffs, k, seed, basis })
    }

    /// Materialize the effective parameters `base + sum_j coeff_j basis_j`.
    pub fn effective(&self) -> Result<ParamSet, WmError> {
        let mut out = ParamSet::new();
        for (name, param) in self.base.iter() {
            let mut value = param.value.clone();
            let coeff = self.coeffs.value(&format!("lora.{name}"))?;
            for (j, b) in self.basis[name].iter().enumerate() {
                value.axpy(coeff.get(j), b);
            }
            out.insert(name, value, true)?;
        }
        Ok(out)
    }

    /// Resolve parameter nodes on `g`: coefficients become trainable leaves
    /// and every effective tensor is their linear combination with the
    /// frozen base and basis.
    pub fn resolve(&self, g: &mut Graph) -> Result<ParamNodes, WmError> {
        g.attach(&self.coeffs);
        let mut map = BTreeMap::new();
        for (name, param) in self.base.iter() {
            let coeff = g.p(&format!("lora.{name}"));
            let node = g.lin_comb(coeff, param.value.clone(), Arc::clone(&self.basis[name]))?;
            map.insert(name.clone(), node);
        }
        Ok(ParamNodes::from_map(map))
    }
}

/// One coefficient-only gradient step of the world-model loss. The base
/// (and basis) are never touched; only `lora.*` vectors move.
pub fn model_finetune_step(
    rssm: &Rssm,
    lora: &mut RssmLora,
    opt: &mut Adam,
    batch: &[Sequence],
    rng: &mut ChaCha8Rng,
) -> Result<WmLossValues, WmError> {
    let mut g = Graph::new();
    let p = lora.resolve(&mut g)?;
    let nodes = rssm.wm_loss_g(&mut g, &p, batch, rng)?;
    let values = WmLossValues {
        total: g.value(nodes.total).get(0),
        pred: g.value(nodes.pred).get(0),
        dyn_kl: g.value(nodes.dyn_kl).get(0),
        rep_kl: g.value(nodes.rep_kl).get(0),
    };
    let grads = g.grad(nodes.total)?;
    opt.step(&mut lora.coeffs, &grads);
    Ok(values)
}
