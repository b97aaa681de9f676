//! The policy: a convex, parameter-space combination of shape-identical
//! actor sub-units, weighted by softmax simplex weights. Pretraining trains
//! the sub-units themselves; finetuning moves only the simplex weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numkernel::{glorot_tensor, Adam, Graph, NodeRef, ParamSet, Tensor};
use crate::worldmodel::ImaginedTrajectory;

use super::critic::Critic;
use super::{lambda_returns, ACConfig, AgentError};

/// Which parameters an actor update is allowed to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Pretraining: every sub-unit parameter and the simplex logits.
    Full,
    /// Finetuning: only the simplex logits; sub-units stay frozen.
    WeightsOnly,
}

/// Names and shapes of one actor sub-unit.
pub fn actor_shapes(x_dim: usize, hidden: usize, n_actions: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        ("act.w1".into(), vec![hidden, x_dim]),
        ("act.b1".into(), vec![hidden]),
        ("act.w2".into(), vec![n_actions, hidden]),
        ("act.b2".into(), vec![n_actions]),
    ]
}

/// A simplex-weighted ensemble of actors. All sub-units share one shape;
/// the effective actor is `sum_i softmax(logits)_i * omega_i` in parameter
/// space, so it is itself an actor of the same shape.
#[derive(Debug, Clone)]
pub struct PolicyEnsemble {
    pub x_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
    /// Number of sub-units.
    pub d: usize,
    /// `sub<i>.<name>` tensors for every sub-unit plus `ens.logits`.
    pub params: ParamSet,
}

impl PolicyEnsemble {
    /// A fresh single-unit ensemble with glorot weights and zero biases.
    pub fn new_single(x_dim: usize, hidden: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut unit = ParamSet::new();
        for (name, shape) in actor_shapes(x_dim, hidden, n_actions) {
            let t = if shape.len() == 2 {
                glorot_tensor(&mut rng, shape[0], shape[1])
            } else {
                Tensor::zeros(&shape)
            };
            unit.insert(&name, t, true).expect("unique actor names");
        }
        Self::from_subunits(x_dim, hidden, n_actions, vec![unit])
            .expect("a freshly built unit matches its own shapes")
    }

    /// Assemble an ensemble from explicit sub-units; logits start at zero
    /// (uniform weights).
    pub fn from_subunits(
        x_dim: usize,
        hidden: usize,
        n_actions: usize,
        subunits: Vec<ParamSet>,
    ) -> Result<Self, AgentError> {
        assert!(!subunits.is_empty(), "an ensemble needs at least one sub-unit");
        let d = subunits.len();
        let mut params = ParamSet::new();
        for (i, unit) in subunits.iter().enumerate() {
            for (name, shape) in actor_shapes(x_dim, hidden, n_actions) {
                let value = unit
                    .value(&name)
                    .map_err(|_| AgentError::SubunitShape { name: name.clone() })?;
                if value.shape() != shape.as_slice() {
                    return Err(AgentError::SubunitShape { name });
                }
                params
                    .insert(&format!("sub{i}.{name}"), value.clone(), true)
                    .expect("prefixed names are unique");
            }
        }
        params
            .insert("ens.logits", Tensor::vector(vec![0.0; d]), true)
            .expect("logits name is unique");
        Ok(Self { x_dim, hidden, n_actions, d, params })
    }

    /// Simplex weights Δ = softmax(logits).
    pub fn weights(&self) -> Vec<f64> {
        let logits = self.params.value("ens.logits").expect("logits always present");
        let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.data().iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Extract one sub-unit as a plain actor parameter set.
    pub fn subunit(&self, i: usize) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, _) in actor_shapes(self.x_dim, self.hidden, self.n_actions) {
            let v = self
                .params
                .value(&format!("sub{i}.{name}"))
                .expect("sub-unit index in range")
                .clone();
            out.insert(&name, v, true).expect("unique actor names");
        }
        out
    }

    /// Materialize the effective actor `sum_i Δ_i ω_i`.
    pub fn effective_actor(&self) -> ParamSet {
        let w = self.weights();
        let mut out = ParamSet::new();
        for (name, shape) in actor_shapes(self.x_dim, self.hidden, self.n_actions) {
            let mut acc = Tensor::zeros(&shape);
            for (i, wi) in w.iter().enumerate() {
                let v = self
                    .params
                    .value(&format!("sub{i}.{name}"))
                    .expect("every sub-unit is complete");
                acc.axpy(*wi, v);
            }
            out.insert(&name, acc, true).expect("unique actor names");
        }
        out
    }

    /// Append a frozen copy of `actor` as a new sub-unit. Its logit starts
    /// at the mean of the existing logits, leaving the weights only mildly
    /// perturbed.
    pub fn snapshot_subunit(&mut self, actor: &ParamSet) -> Result<(), AgentError> {
        for (name, shape) in actor_shapes(self.x_dim, self.hidden, self.n_actions) {
            let v = actor
                .value(&name)
                .map_err(|_| AgentError::SubunitShape { name: name.clone() })?;
            if v.shape() != shape.as_slice() {
                return Err(AgentError::SubunitShape { name });
            }
        }
        let old_logits = self.params.value("ens.logits").expect("logits present").clone();
        let mean = old_logits.data().iter().sum::<f64>() / self.d as f64;
        let mut units: Vec<ParamSet> = (0..self.d).map(|i| self.subunit(i)).collect();
        units.push(actor.clone());
        let mut next = Self::from_subunits(self.x_dim, self.hidden, self.n_actions, units)?;
        let mut logits: Vec<f64> = old_logits.data().to_vec();
        logits.push(mean);
        next.params
            .set_value("ens.logits", Tensor::vector(logits))
            .expect("rebuilt logits match the new size");
        *self = next;
        Ok(())
    }

    /// Resolve the effective actor's tensors as graph nodes: the simplex
    /// weights are a softmax over the logits leaf and every effective tensor
    /// is a convex combination of the sub-unit leaves.
    fn resolve_g(&self, g: &mut Graph) -> Result<EffectiveActor, AgentError> {
        g.attach(&self.params);
        let logits = g.p("ens.logits");
        let weights = g.group_softmax(logits, self.d)?;
        let mut nodes = Vec::new();
        for (name, _) in actor_shapes(self.x_dim, self.hidden, self.n_actions) {
            let items: Vec<NodeRef> =
                (0..self.d).map(|i| g.p(&format!("sub{i}.{name}"))).collect();
            nodes.push(g.convex_comb(weights, &items)?);
        }
        Ok(EffectiveActor {
            w1: nodes[0],
            b1: nodes[1],
            w2: nodes[2],
            b2: nodes[3],
        })
    }

    /// Action logits of the effective actor at `x`, on an existing graph.
    fn logits_g(&self, g: &mut Graph, eff: &EffectiveActor, x: &[f64]) -> Result<NodeRef, AgentError> {
        let xn = g.constant(Tensor::vector(x.to_vec()));
        let h1 = g.linear(xn, eff.w1, Some(eff.b1))?;
        let h1 = g.relu(h1);
        Ok(g.linear(h1, eff.w2, Some(eff.b2))?)
    }

    /// Forward-only action distribution at `x`.
    pub fn policy_dist(&self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        let mut g = Graph::new();
        let eff = self.resolve_g(&mut g)?;
        let logits = self.logits_g(&mut g, &eff, x)?;
        let probs = g.group_softmax(logits, self.n_actions)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Sample an action; returns the index and the full distribution.
    pub fn act(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<(usize, Vec<f64>), AgentError> {
        let dist = self.policy_dist(x)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = dist.len() - 1;
        for (i, p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                idx = i;
                break;
            }
        }
        Ok((idx, dist))
    }
}

/// Resolved effective-actor tensors on a graph.
struct EffectiveActor {
    w1: NodeRef,
    b1: NodeRef,
    w2: NodeRef,
    b2: NodeRef,
}

/// One score-function gradient step on λ-return advantages with an entropy
/// bonus. In `WeightsOnly` mode every sub-unit tensor is bitwise unchanged;
/// only the simplex logits move.
pub fn actor_update(
    traj: &ImaginedTrajectory,
    ensemble: &mut PolicyEnsemble,
    critic: &Critic,
    cfg: &ACConfig,
    mode: UpdateMode,
    opt: &mut Adam,
) -> Result<f64, AgentError> {
    if traj.steps.is_empty() {
        return Err(AgentError::EmptyTrajectory);
    }
    let h = traj.steps.len();
    // numeric targets: λ-returns and advantages under the current critic
    let mut values: Vec<f64> = Vec::with_capacity(h + 1);
    let mut rewards: Vec<f64> = Vec::with_capacity(h + 1);
    let mut continues: Vec<f64> = Vec::with_capacity(h + 1);
    for step in &traj.steps {
        values.push(critic.value(&step.x)?);
        rewards.push(step.reward);
        continues.push(step.cont);
    }
    values.push(critic.value(&traj.final_x)?);
    rewards.push(0.0);
    continues.push(1.0);
    let returns = lambda_returns(&rewards, &values, &continues, cfg.gamma, cfg.lambda)?;

    match mode {
        UpdateMode::Full => ensemble.params.set_all_trainable(true),
        UpdateMode::WeightsOnly => {
            ensemble.params.set_all_trainable(false);
            ensemble
                .params
                .get_mut("ens.logits")
                .expect("logits always present")
                .trainable = true;
        }
    }

    let mut g = Graph::new();
    let eff = ensemble.resolve_g(&mut g)?;
    let mut terms: Vec<NodeRef> = Vec::with_capacity(h);
    for (t, step) in traj.steps.iter().enumerate() {
        let adv = returns[t] - values[t];
        let logits = ensemble.logits_g(&mut g, &eff, &step.x)?;
        let logp = g.group_log_softmax(logits, ensemble.n_actions)?;
        let probs = g.group_softmax(logits, ensemble.n_actions)?;
        let logp_a = g.pick_per_row(logp, &[step.action])?;
        // entropy = -sum p log p
        let plogp = g.mul(probs, logp)?;
        let neg_ent = g.sum_all(plogp);
        let pg = g.scale(logp_a, -adv);
        let ent_term = g.scale(neg_ent, cfg.eta);
        terms.push(g.add(pg, ent_term)?);
    }
    let cat = g.cat_cols(&terms)?;
    let sum = g.sum_all(cat);
    let loss = g.scale(sum, 1.0 / h as f64);
    let loss_value = g.value(loss).get(0);
    let grads = g.grad(loss)?;
    opt.step(&mut ensemble.params, &grads);
    Ok(loss_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmodel::ImaginedStep;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_actor(x_dim: usize, hidden: usize, n_actions: usize, seed: u64) -> ParamSet {
        let mut r = rng(seed);
        let mut ps = ParamSet::new();
        for (name, shape) in actor_shapes(x_dim, hidden, n_actions) {
            let t = if shape.len() == 2 {
                glorot_tensor(&mut r, shape[0], shape[1])
            } else {
                Tensor::vector((0..shape[0]).map(|_| r.gen_range(-0.2..0.2)).collect())
            };
            ps.insert(&name, t, true).unwrap();
        }
        ps
    }

    /// Forward an actor with plain loops, outside the graph machinery.
    fn naive_dist(ps: &ParamSet, x: &[f64], hidden: usize, n_actions: usize) -> Vec<f64> {
        let w1 = ps.value("act.w1").unwrap();
        let b1 = ps.value("act.b1").unwrap();
        let w2 = ps.value("act.w2").unwrap();
        let b2 = ps.value("act.b2").unwrap();
        let h1: Vec<f64> = (0..hidden)
            .map(|i| {
                let s: f64 = (0..x.len()).map(|j| w1.at(i, j) * x[j]).sum();
                (s + b1.get(i)).max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..n_actions)
            .map(|i| {
                let s: f64 = (0..hidden).map(|j| w2.at(i, j) * h1[j]).sum();
                s + b2.get(i)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    #[test]
    fn single_unit_matches_the_bare_actor() {
        let unit = random_actor(5, 6, 4, 3);
        let ens = PolicyEnsemble::from_subunits(5, 6, 4, vec![unit.clone()]).unwrap();
        let x = [0.3, -0.1, 0.7, 0.0, 0.5];
        let got = ens.policy_dist(&x).unwrap();
        let want = naive_dist(&unit, &x, 6, 4);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_actor_is_uniform() {
        let mut unit = ParamSet::new();
        for (name, shape) in actor_shapes(4, 3, 15) {
            unit.insert(&name, Tensor::zeros(&shape), true).unwrap();
        }
        let ens = PolicyEnsemble::from_subunits(4, 3, 15, vec![unit]).unwrap();
        let dist = ens.policy_dist(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        for p in dist {
            assert!((p - 1.0 / 15.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_matches_naive_parameter_combination() {
        let units: Vec<ParamSet> = (0..3).map(|i| random_actor(5, 6, 4, 10 + i)).collect();
        let mut ens = PolicyEnsemble::from_subunits(5, 6, 4, units.clone()).unwrap();
        ens.params
            .set_value("ens.logits", Tensor::vector(vec![0.4, -1.2, 0.9]))
            .unwrap();
        let w = ens.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|wi| *wi >= 0.0));

        // combine parameters by hand, then forward the combined actor
        let mut combined = ParamSet::new();
        for (name, shape) in actor_shapes(5, 6, 4) {
            let mut acc = Tensor::zeros(&shape);
            for (unit, wi) in units.iter().zip(&w) {
                acc.axpy(*wi, unit.value(&name).unwrap());
            }
            combined.insert(&name, acc, true).unwrap();
        }
        let x = [0.2, 0.8, -0.4, 0.1, 0.0];
        let got = ens.policy_dist(&x).unwrap();
        let want = naive_dist(&combined, &x, 6, 4);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn identical_units_make_the_weights_irrelevant() {
        let unit = random_actor(4, 5, 3, 7);
        let mut ens =
            PolicyEnsemble::from_subunits(4, 5, 3, vec![unit.clone(), unit.clone()]).unwrap();
        let x = [0.5, -0.5, 0.25, 1.0];
        let base = ens.policy_dist(&x).unwrap();
        for logits in [[3.0, -1.0], [-2.0, 2.0], [0.0, 0.0]] {
            ens.params
                .set_value("ens.logits", Tensor::vector(logits.to_vec()))
                .unwrap();
            let d = ens.policy_dist(&x).unwrap();
            for (a, b) in d.iter().zip(&base) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn snapshot_grows_by_one_and_can_dominate() {
        let mut ens = PolicyEnsemble::new_single(4, 5, 3, 0);
        let other = random_actor(4, 5, 3, 99);
        ens.snapshot_subunit(&other).unwrap();
        assert_eq!(ens.d, 2);
        assert_eq!(ens.weights().len(), 2);
        // push all weight onto the snapshot: behaves as the snapshot alone
        ens.params
            .set_value("ens.logits", Tensor::vector(vec![-60.0, 60.0]))
            .unwrap();
        let x = [0.1, 0.9, -0.3, 0.2];
        let got = ens.policy_dist(&x).unwrap();
        let want = naive_dist(&other, &x, 5, 3);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_rejects_mismatched_shapes() {
        let mut ens = PolicyEnsemble::new_single(4, 5, 3, 0);
        let wrong = random_actor(4, 6, 3, 1);
        assert!(matches!(
            ens.snapshot_subunit(&wrong),
            Err(AgentError::SubunitShape { .. })
        ));
    }

    #[test]
    fn entropy_stays_within_bounds() {
        let mut r = rng(5);
        for seed in 0..20 {
            let ens = PolicyEnsemble::new_single(6, 8, 15, seed);
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let dist = ens.policy_dist(&x).unwrap();
            let ent: f64 = -dist
                .iter()
                .filter(|p| **p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>();
            assert!(ent >= 0.0);
            assert!(ent <= (15.0f64).ln() + 1e-12);
        }
    }

    fn bandit_trajectory(
        ens: &PolicyEnsemble,
        x: &[f64],
        h: usize,
        rng: &mut ChaCha8Rng,
    ) -> (ImaginedTrajectory, f64) {
        let mut steps = Vec::with_capacity(h);
        let mut total = 0.0;
        for _ in 0..h {
            let (a, _) = ens.act(x, rng).unwrap();
            let reward = if a == 0 { 1.0 } else { 0.0 };
            total += reward;
            steps.push(ImaginedStep { x: x.to_vec(), action: a, reward, cont: 1.0 });
        }
        (
            ImaginedTrajectory { steps, final_x: x.to_vec() },
            total / h as f64,
        )
    }

    #[test]
    fn full_mode_improves_the_bandit_return() {
        let mut ens = PolicyEnsemble::new_single(4, 8, 3, 2);
        let mut critic = Critic::new(4, 8, 3);
        critic.zero();
        let cfg = ACConfig { actor_lr: 0.05, ..ACConfig::fast() };
        let mut opt = Adam::new(cfg.actor_lr, cfg.adam_eps, Some(cfg.grad_clip));
        let mut r = rng(77);
        let x = [0.5, -0.5, 0.25, 1.0];
        let p0_before = ens.policy_dist(&x).unwrap()[0];
        let mut late = 0.0;
        for step in 0..200 {
            let (traj, mean_reward) = bandit_trajectory(&ens, &x, 8, &mut r);
            if step >= 180 {
                late += mean_reward;
            }
            actor_update(&traj, &mut ens, &critic, &cfg, UpdateMode::Full, &mut opt).unwrap();
        }
        let p0_after = ens.policy_dist(&x).unwrap()[0];
        assert!(
            p0_after > p0_before + 0.3,
            "rewarded action did not gain mass: {p0_before} -> {p0_after}"
        );
        assert!(
            late / 20.0 > 0.9,
            "late imagined return stayed low: {}",
            late / 20.0
        );
    }

    #[test]
    fn weights_only_mode_never_touches_subunits() {
        let units: Vec<ParamSet> = (0..2).map(|i| random_actor(4, 5, 3, 40 + i)).collect();
        let mut ens = PolicyEnsemble::from_subunits(4, 5, 3, units).unwrap();
        let before: Vec<Vec<u8>> = (0..2).map(|i| ens.subunit(i).to_bytes()).collect();
        let logits_before = ens.params.value("ens.logits").unwrap().clone();

        let mut critic = Critic::new(4, 5, 9);
        critic.zero();
        let cfg = ACConfig { actor_lr: 0.1, ..ACConfig::fast() };
        let mut opt = Adam::new(cfg.actor_lr, cfg.adam_eps, Some(cfg.grad_clip));
        let mut r = rng(8);
        let x = [0.3, 0.1, -0.2, 0.6];
        for _ in 0..5 {
            let (traj, _) = bandit_trajectory(&ens, &x, 6, &mut r);
            actor_update(&traj, &mut ens, &critic, &cfg, UpdateMode::WeightsOnly, &mut opt)
                .unwrap();
        }
        for (i, b) in before.iter().enumerate() {
            assert_eq!(&ens.subunit(i).to_bytes(), b, "sub-unit {i} moved");
        }
        let logits_after = ens.params.value("ens.logits").unwrap();
        assert!(
            logits_before
                .data()
                .iter()
                .zip(logits_after.data())
                .any(|(a, b)| a != b),
            "logits never moved"
        );
    }

    #[test]
    fn full_mode_moves_subunit_parameters() {
        let mut ens = PolicyEnsemble::new_single(4, 5, 3, 1);
        let before = ens.subunit(0).to_bytes();
        let mut critic = Critic::new(4, 5, 2);
        critic.zero();
        let cfg = ACConfig { actor_lr: 0.05, ..ACConfig::fast() };
        let mut opt = Adam::new(cfg.actor_lr, cfg.adam_eps, Some(cfg.grad_clip));
        let mut r = rng(4);
        let (traj, _) = bandit_trajectory(&ens, &[0.4, -0.1, 0.2, 0.9], 6, &mut r);
        actor_update(&traj, &mut ens, &critic, &cfg, UpdateMode::Full, &mut opt).unwrap();
        assert_ne!(ens.subunit(0).to_bytes(), before);
    }

    #[test]
    fn act_is_deterministic_under_a_fixed_seed() {
        let ens = PolicyEnsemble::new_single(4, 6, 5, 12);
        let x = [0.2, 0.4, -0.6, 0.8];
        let a: Vec<usize> = {
            let mut r = rng(3);
            (0..10).map(|_| ens.act(&x, &mut r).unwrap().0).collect()
        };
        let b: Vec<usize> = {
            let mut r = rng(3);
            (0..10).map(|_| ens.act(&x, &mut r).unwrap().0).collect()
        };
        assert_eq!(a, b);
    }
}
