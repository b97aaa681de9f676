//! Latent world model: categorical-latent recurrent state-space model with
//! encoder, prior, prediction heads, composite training loss, imagination
//! rollouts, and frozen-basis low-rank finetuning.

pub mod lora;
pub mod rssm;

pub use lora::{basis_for, model_finetune_step, RssmLora};
pub use rssm::{
    param_shapes, ImaginedStep, ImaginedTrajectory, ModelState, Rssm, RssmConfig, Sequence,
    WmLossNodes, WmLossValues,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::numkernel::{Graph, NodeRef};
use crate::numkernel::ParamSet;
use crate::numkernel::KernelError;

/// World-model failure modes.
#[derive(Debug, Error)]
pub enum WmError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("training sequences need at least 2 steps, got {len}")]
    ShortSequence { len: usize },
    #[error("sequence fields have inconsistent lengths or widths")]
    RaggedSequence,
    #[error("action index out of range for the configured action count")]
    BadAction,
    #[error("imagination horizon must be at least 1")]
    BadHorizon,
    #[error("loss needs a non-empty batch")]
    EmptyBatch,
    #[error("low-rank adapter needs a positive basis size matching its coefficients")]
    BadRank,
}

/// Resolved graph nodes for every model parameter, independent of whether
/// they are raw leaves or low-rank combinations.
pub struct ParamNodes {
    map: BTreeMap<String, NodeRef>,
}

impl ParamNodes {
    /// Plain resolution: every parameter is its own trainable leaf.
    /// `g` must already have `params` attached.
    pub fn direct(g: &mut Graph, params: &ParamSet) -> Self {
        let map = params.names().map(|n| (n.clone(), g.p(n))).collect();
        Self { map }
    }

    pub fn from_map(map: BTreeMap<String, NodeRef>) -> Self {
        Self { map }
    }

    pub fn get(&self, name: &str) -> NodeRef {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not resolved"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::finite_diff_check;
    use crate::numkernel::Adam;
    use crate::numkernel::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Rssm {
        Rssm::new(RssmConfig::tiny())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(cfg: &RssmConfig, seqs: usize, t: usize, seed: u64) -> Vec<Sequence> {
        let mut r = rng(seed);
        (0..seqs)
            .map(|_| Sequence {
                obs: (0..t)
                    .map(|_| (0..cfg.obs_dim).map(|_| r.gen_range(0.0..1.0)).collect())
                    .collect(),
                actions: (0..t).map(|_| r.gen_range(0..cfg.n_actions)).collect(),
                rewards: (0..t).map(|_| r.gen_range(-1.0..1.0)).collect(),
                continues: (0..t).map(|_| 1.0).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_params_sequence_step_halves_h() {
        // zero weights: update gate sigmoid(0) = 1/2, candidate tanh(0) = 0,
        // so h' = h / 2
        let m = tiny();
        let mut ps = m.init_params(0);
        for name in ps.names().cloned().collect::<Vec<_>>() {
            let shape = ps.value(&name).unwrap().shape().to_vec();
            ps.set_value(&name, Tensor::zeros(&shape)).unwrap();
        }
        let mut g = Graph::new();
        g.attach(&ps);
        let p = ParamNodes::direct(&mut g, &ps);
        let h = g.constant(Tensor::vector(vec![0.8, -0.4, 0.2, 1.0]));
        let z = g.constant(Tensor::vector(vec![0.0; m.cfg.z_dim()]));
        let out = m.sequence_step_g(&mut g, &p, h, z, 0).unwrap();
        for (got, want) in g.value(out).data().iter().zip([0.4, -0.2, 0.1, 0.5]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn sequence_step_matches_scalar_oracle() {
        // replicate the gated cell with plain loops
        let m = tiny();
        let ps = m.init_params(3);
        let h_in = vec![0.3, -0.2, 0.5, 0.1];
        let z_in: Vec<f64> = (0..m.cfg.z_dim()).map(|i| (i as f64) * 0.1 - 0.2).collect();
        let action = 1;

        let mut g = Graph::new();
        g.attach(&ps);
        let p = ParamNodes::direct(&mut g, &ps);
        let h = g.constant(Tensor::vector(h_in.clone()));
        let z = g.constant(Tensor::vector(z_in.clone()));
        let out = m.sequence_step_g(&mut g, &p, h, z, action).unwrap();
        let got = g.value(out).data().to_vec();

        let mut input = z_in.clone();
        let mut a = vec![0.0; m.cfg.n_actions];
        a[action] = 1.0;
        input.extend(a);
        let mat = |name: &str| ps.value(name).unwrap();
        let dot_row = |w: &Tensor, row: usize, v: &[f64]| -> f64 {
            (0..v.len()).map(|c| w.at(row, c) * v[c]).sum()
        };
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        for i in 0..m.cfg.h_dim {
            let u = sigmoid(
                dot_row(mat("gru.wz"), i, &input)
                    + dot_row(mat("gru.uz"), i, &h_in)
                    + mat("gru.bz").get(i),
            );
            let r = sigmoid(
                dot_row(mat("gru.wr"), i, &input)
                    + dot_row(mat("gru.ur"), i, &h_in)
                    + mat("gru.br").get(i),
            );
            let gated: Vec<f64> = (0..m.cfg.h_dim)
                .map(|j| {
                    let rj = sigmoid(
                        dot_row(mat("gru.wr"), j, &input)
                            + dot_row(mat("gru.ur"), j, &h_in)
                            + mat("gru.br").get(j),
                    );
                    rj * h_in[j]
                })
                .collect();
            let cand = (dot_row(mat("gru.wh"), i, &input)
                + dot_row(mat("gru.uh"), i, &gated)
                + mat("gru.bh").get(i))
            .tanh();
            let want = (1.0 - u) * h_in[i] + u * cand;
            assert!((got[i] - want).abs() < 1e-12, "unit {i}: {} vs {want}", got[i]);
            let _ = r;
        }
    }

    #[test]
    fn zero_final_layers_give_uniform_posterior_and_prior() {
        let m = tiny();
        let mut ps = m.init_params(1);
        for name in ["enc.w2", "enc.b2", "pri.w2", "pri.b2"] {
            let shape = ps.value(name).unwrap().shape().to_vec();
            ps.set_value(name, Tensor::zeros(&shape)).unwrap();
        }
        let h = vec![0.3; m.cfg.h_dim];
        let obs = vec![0.5; m.cfg.obs_dim];
        let uniform = 1.0 / m.cfg.classes as f64;
        for p in m.encode_probs(&ps, &h, &obs).unwrap() {
            assert!((p - uniform).abs() < 1e-15);
        }
        for p in m.prior_probs(&ps, &h).unwrap() {
            assert!((p - uniform).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_heads_predict_neutral_values() {
        let m = tiny();
        let mut ps = m.init_params(1);
        for name in ["rew.w2", "rew.b2", "con.w2", "con.b2", "dec.w2", "dec.b2"] {
            let shape = ps.value(name).unwrap().shape().to_vec();
            ps.set_value(name, Tensor::zeros(&shape)).unwrap();
        }
        let (r, c, dec) = m
            .predict_heads(&ps, &vec![0.2; m.cfg.h_dim], &vec![0.1; m.cfg.z_dim()])
            .unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(c, 0.5);
        assert!(dec.iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn forward_passes_are_deterministic() {
        let m = tiny();
        let ps = m.init_params(9);
        let h = vec![0.1; m.cfg.h_dim];
        let obs = vec![0.7; m.cfg.obs_dim];
        assert_eq!(m.encode_probs(&ps, &h, &obs).unwrap(), m.encode_probs(&ps, &h, &obs).unwrap());
        assert_eq!(m.prior_probs(&ps, &h).unwrap(), m.prior_probs(&ps, &h).unwrap());
        let a = m.wm_loss(&ps, &random_batch(&m.cfg, 2, 3, 4), &mut rng(0)).unwrap();
        let b = m.wm_loss(&ps, &random_batch(&m.cfg, 2, 3, 4), &mut rng(0)).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn uniform_model_hits_the_free_bits_floor() {
        // zero latent layers make posterior == prior == uniform, so both KL
        // terms clip to exactly 1
        let m = tiny();
        let mut ps = m.init_params(1);
        for name in ["enc.w2", "enc.b2", "pri.w2", "pri.b2"] {
            let shape = ps.value(name).unwrap().shape().to_vec();
            ps.set_value(name, Tensor::zeros(&shape)).unwrap();
        }
        let v = m.wm_loss(&ps, &random_batch(&m.cfg, 2, 4, 8), &mut rng(1)).unwrap();
        assert_eq!(v.dyn_kl, 1.0);
        assert_eq!(v.rep_kl, 1.0);
        assert!(
            (v.total - (m.cfg.beta_pred * v.pred + 0.5 * 1.0 + 0.1 * 1.0)).abs() < 1e-12
        );
    }

    #[test]
    fn free_bits_floor_holds_on_random_models() {
        let m = tiny();
        for seed in 0..5 {
            let ps = m.init_params(seed);
            let v = m.wm_loss(&ps, &random_batch(&m.cfg, 2, 4, seed), &mut rng(seed)).unwrap();
            assert!(v.dyn_kl >= 1.0 - 1e-12);
            assert!(v.rep_kl >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn kl_matches_brute_force_when_above_the_floor() {
        // inflate the latent layers so the posterior/prior disagree strongly
        // and the clip is inactive, then recompute the KLs by hand
        let m = tiny();
        let mut ps = m.init_params(5);
        for name in ["enc.w2", "pri.w2"] {
            let scaled = ps.value(name).unwrap().scale(30.0);
            ps.set_value(name, scaled).unwrap();
        }
        let batch = random_batch(&m.cfg, 1, 2, 3);
        let v = m.wm_loss(&ps, &batch, &mut rng(0)).unwrap();

        // replay the filtering loop with forward evaluations (mean-latent
        // mode makes it deterministic)
        let seq = &batch[0];
        let mut h = vec![0.0; m.cfg.h_dim];
        let mut kls = Vec::new();
        for t in 0..seq.len() {
            let post = m.encode_probs(&ps, &h, &seq.obs[t]).unwrap();
            let prior = m.prior_probs(&ps, &h).unwrap();
            let kl: f64 = post
                .iter()
                .zip(&prior)
                .map(|(p, q)| if *p > 0.0 { p * (p.ln() - q.ln()) } else { 0.0 })
                .sum();
            kls.push(kl.max(1.0));
            if t + 1 < seq.len() {
                // mean-latent: z is the posterior probability vector
                let mut g = Graph::new();
                g.attach(&ps);
                let pn = ParamNodes::direct(&mut g, &ps);
                let hn = g.constant(Tensor::vector(h.clone()));
                let zn = g.constant(Tensor::vector(post.clone()));
                let out = m.sequence_step_g(&mut g, &pn, hn, zn, seq.actions[t]).unwrap();
                h = g.value(out).data().to_vec();
            }
        }
        let expect = kls.iter().sum::<f64>() / kls.len() as f64;
        assert!(
            (v.dyn_kl - expect).abs() < 1e-9,
            "graph {} vs oracle {expect}",
            v.dyn_kl
        );
        assert!(kls.iter().any(|k| *k > 1.0), "test needs an unclipped step");
    }

    #[test]
    fn short_or_ragged_sequences_rejected() {
        let m = tiny();
        let ps = m.init_params(0);
        let mut one = random_batch(&m.cfg, 1, 2, 0);
        one[0].obs.truncate(1);
        one[0].actions.truncate(1);
        one[0].rewards.truncate(1);
        one[0].continues.truncate(1);
        assert!(matches!(
            m.wm_loss(&ps, &one, &mut rng(0)),
            Err(WmError::ShortSequence { len: 1 })
        ));
        let mut ragged = random_batch(&m.cfg, 1, 3, 0);
        ragged[0].rewards.pop();
        assert!(matches!(m.wm_loss(&ps, &ragged, &mut rng(0)), Err(WmError::RaggedSequence)));
        assert!(matches!(m.wm_loss(&ps, &[], &mut rng(0)), Err(WmError::EmptyBatch)));
    }

    #[test]
    fn wm_loss_gradient_matches_finite_differences() {
        let m = tiny();
        let ps = m.init_params(11);
        let batch = random_batch(&m.cfg, 1, 3, 7);
        let err = finite_diff_check(
            |g| {
                let names: Vec<String> = ps.names().cloned().collect();
                let map = names.iter().map(|n| (n.clone(), g.p(n))).collect();
                let pn = ParamNodes::from_map(map);
                let nodes = m
                    .wm_loss_g(g, &pn, &batch, &mut rng(0))
                    .map_err(|_| crate::numkernel::KernelError::InvalidEps(0.0))?;
                Ok(nodes.total)
            },
            &ps,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "wm loss gradcheck {err}");
    }

    #[test]
    fn imagine_one_step_and_replay_oracle() {
        let m = tiny();
        let ps = m.init_params(21);
        let start = m
            .observe_first(&ps, &vec![0.4; m.cfg.obs_dim], &mut rng(2))
            .unwrap();
        let traj = m
            .imagine(&ps, &start, |_, _| 1, 1, &mut rng(3))
            .unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].x, start.x());

        // longer rollout: every reward must match heads recomputed on the
        // successor representation
        let traj = m.imagine(&ps, &start, |_, _| 2, 4, &mut rng(3)).unwrap();
        for (i, step) in traj.steps.iter().enumerate() {
            let next_x = if i + 1 < traj.steps.len() {
                &traj.steps[i + 1].x
            } else {
                &traj.final_x
            };
            let (h, z) = next_x.split_at(m.cfg.h_dim);
            let (r, c, _) = m.predict_heads(&ps, h, z).unwrap();
            assert!((step.reward - r).abs() < 1e-12);
            assert!((step.cont - c).abs() < 1e-12);
        }

        // deterministic given the same rng seed
        let a = m.imagine(&ps, &start, |_, _| 0, 3, &mut rng(5)).unwrap();
        let b = m.imagine(&ps, &start, |_, _| 0, 3, &mut rng(5)).unwrap();
        assert_eq!(a.final_x, b.final_x);
        assert!(matches!(
            m.imagine(&ps, &start, |_, _| 0, 0, &mut rng(0)),
            Err(WmError::BadHorizon)
        ));
    }

    #[test]
    fn training_reduces_the_loss() {
        let m = tiny();
        let mut ps = m.init_params(13);
        let batch = random_batch(&m.cfg, 2, 3, 17);
        let mut opt = Adam::new(3e-3, 1e-8, Some(1000.0));
        let first = m.wm_loss(&ps, &batch, &mut rng(0)).unwrap().total;
        let mut last = first;
        for _ in 0..60 {
            last = m.train_step(&mut ps, &mut opt, &batch, &mut rng(0)).unwrap().total;
        }
        assert!(last < first - 0.1, "loss {first} -> {last}");
    }

    #[test]
    fn lora_zero_coefficients_reproduce_base_bitwise() {
        let m = tiny();
        let base = m.init_params(31);
        let lora = RssmLora::new(base.clone(), 4, 99).unwrap();
        let eff = lora.effective().unwrap();
        for name in base.names() {
            assert_eq!(
                base.value(name).unwrap().data(),
                eff.value(name).unwrap().data(),
                "{name} changed"
            );
        }
    }

    #[test]
    fn lora_effective_matches_naive_summation() {
        let m = tiny();
        let base = m.init_params(32);
        let mut lora = RssmLora::new(base.clone(), 3, 7).unwrap();
        let mut r = rng(12);
        for name in lora.coeffs.names().cloned().collect::<Vec<_>>() {
            let vals: Vec<f64> = (0..3).map(|_| r.gen_range(-0.5..0.5)).collect();
            lora.coeffs.set_value(&name, Tensor::vector(vals)).unwrap();
        }
        let eff = lora.effective().unwrap();
        for name in base.names() {
            let shape = base.value(name).unwrap().shape().to_vec();
            let basis = basis_for(7, name, &shape, 3);
            let coeff = lora.coeffs.value(&format!("lora.{name}")).unwrap();
            let mut want = base.value(name).unwrap().clone();
            for (j, b) in basis.iter().enumerate() {
                for (w, bv) in want.data_mut().iter_mut().zip(b.data()) {
                    *w += coeff.get(j) * bv;
                }
            }
            for (a, b) in eff.value(name).unwrap().data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lora_is_linear_in_coefficients() {
        let m = tiny();
        let base = m.init_params(33);
        let mut l1 = RssmLora::new(base.clone(), 2, 5).unwrap();
        let mut l2 = RssmLora::new(base.clone(), 2, 5).unwrap();
        let mut l12 = RssmLora::new(base.clone(), 2, 5).unwrap();
        let names: Vec<String> = l1.coeffs.names().cloned().collect();
        let mut r = rng(3);
        for name in &names {
            let a: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
            let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            l1.coeffs.set_value(name, Tensor::vector(a)).unwrap();
            l2.coeffs.set_value(name, Tensor::vector(b)).unwrap();
            l12.coeffs.set_value(name, Tensor::vector(s)).unwrap();
        }
        let (e1, e2, e12) =
            (l1.effective().unwrap(), l2.effective().unwrap(), l12.effective().unwrap());
        for name in base.names() {
            let base_v = base.value(name).unwrap();
            for i in 0..base_v.numel() {
                let d1 = e1.value(name).unwrap().get(i) - base_v.get(i);
                let d2 = e2.value(name).unwrap().get(i) - base_v.get(i);
                let d12 = e12.value(name).unwrap().get(i) - base_v.get(i);
                assert!((d12 - (d1 + d2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finetune_touches_only_the_coefficients() {
        let m = tiny();
        let base = m.init_params(41);
        let mut lora = RssmLora::new(base, 4, 17).unwrap();
        let batch = random_batch(&m.cfg, 2, 3, 51);
        let base_bytes = lora.base.to_bytes();

        // zero learning rate leaves the coefficients untouched
        let mut frozen_opt = Adam::new(0.0, 1e-8, Some(1000.0));
        let coeff_bytes = lora.coeffs.to_bytes();
        model_finetune_step(&m, &mut lora, &mut frozen_opt, &batch, &mut rng(0)).unwrap();
        assert_eq!(lora.coeffs.to_bytes(), coeff_bytes);

        let mut opt = Adam::new(1e-2, 1e-8, Some(1000.0));
        let first = model_finetune_step(&m, &mut lora, &mut opt, &batch, &mut rng(0))
            .unwrap()
            .total;
        let mut last = first;
        for _ in 0..50 {
            last = model_finetune_step(&m, &mut lora, &mut opt, &batch, &mut rng(0))
                .unwrap()
                .total;
        }
        assert!(last < first, "finetune loss {first} -> {last}");
        assert_eq!(lora.base.to_bytes(), base_bytes, "base must stay frozen");
        assert_ne!(lora.coeffs.to_bytes(), coeff_bytes, "coefficients must move");
    }

    #[test]
    fn lora_gradcheck_through_coefficients() {
        let m = tiny();
        let base = m.init_params(43);
        let lora = RssmLora::new(base, 3, 23).unwrap();
        let batch = random_batch(&m.cfg, 1, 2, 61);
        let err = finite_diff_check(
            |g| {
                // base values are constants here; only coeffs are attached
                // by the checker, so resolve manually against them
                let mut map = std::collections::BTreeMap::new();
                for (name, param) in lora.base.iter() {
                    let coeff = g.p(&format!("lora.{name}"));
                    let node = g
                        .lin_comb(
                            coeff,
                            param.value.clone(),
                            std::sync::Arc::new(basis_for(23, name, param.value.shape(), 3)),
                        )
                        .unwrap();
                    map.insert(name.clone(), node);
                }
                let pn = ParamNodes::from_map(map);
                let nodes = m
                    .wm_loss_g(g, &pn, &batch, &mut rng(0))
                    .map_err(|_| crate::numkernel::KernelError::InvalidEps(0.0))?;
                Ok(nodes.total)
            },
            &lora.coeffs,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "lora gradcheck {err}");
    }

    #[test]
    fn from_parts_round_trips() {
        let m = tiny();
        let base = m.init_params(51);
        let mut lora = RssmLora::new(base, 4, 3).unwrap();
        let names: Vec<String> = lora.coeffs.names().cloned().collect();
        lora.coeffs
            .set_value(&names[0], Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]))
            .unwrap();
        let restored =
            RssmLora::from_parts(lora.base.clone(), lora.coeffs.clone(), 4, 3).unwrap();
        let (a, b) = (lora.effective().unwrap(), restored.effective().unwrap());
        for name in a.names() {
            assert_eq!(a.value(name).unwrap().data(), b.value(name).unwrap().data());
        }
        assert!(matches!(
            RssmLora::from_parts(lora.base.clone(), lora.coeffs.clone(), 5, 3),
            Err(WmError::BadRank)
        ));
    }
}
