//! The latent world model: encoder, prior, gated recurrent sequence model,
//! prediction heads, composite training loss, and imagination rollouts.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numkernel::{Graph, NodeRef};
use crate::numkernel::ParamSet;
use crate::numkernel::{glorot_tensor, Tensor};

use super::{ParamNodes, WmError};

/// Shape and loss hyperparameters of the world model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RssmConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    /// Number of categorical latent rows.
    pub latents: usize,
    /// Classes per latent row.
    pub classes: usize,
    /// Deterministic recurrent width.
    pub h_dim: usize,
    /// Hidden width of every MLP.
    pub hidden: usize,
    /// Loss mixture weights.
    pub beta_pred: f64,
    pub beta_dyn: f64,
    pub beta_rep: f64,
    /// When set, latents are the softmax probabilities instead of one-hot
    /// samples. Finite-difference checks need this: central differences
    /// cannot see through a frozen sample.
    pub mean_latent: bool,
}

impl RssmConfig {
    /// Desk-scale default matching the simulator observation.
    pub fn desk() -> Self {
        Self {
            obs_dim: crate::drivesim::OBS_LEN,
            n_actions: crate::drivesim::N_ACTIONS,
            latents: 8,
            classes: 8,
            h_dim: 64,
            hidden: 128,
            beta_pred: 1.0,
            beta_dyn: 0.5,
            beta_rep: 0.1,
            mean_latent: false,
        }
    }

    /// Tiny shape for unit tests and gradient checks.
    pub fn tiny() -> Self {
        Self {
            obs_dim: 6,
            n_actions: 3,
            latents: 2,
            classes: 3,
            h_dim: 4,
            hidden: 8,
            beta_pred: 1.0,
            beta_dyn: 0.5,
            beta_rep: 0.1,
            mean_latent: true,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.latents * self.classes
    }

    pub fn x_dim(&self) -> usize {
        self.h_dim + self.z_dim()
    }
}

/// Recurrent model state: deterministic part plus flattened latent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelState {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

impl ModelState {
    /// The representation handed to policy and value heads.
    pub fn x(&self) -> Vec<f64> {
        let mut v = self.h.clone();
        v.extend_from_slice(&self.z);
        v
    }
}

/// One training sequence from the replay buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sequence {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// 1.0 while the episode continues, 0.0 on the final transition.
    pub continues: Vec<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn check(&self, cfg: &RssmConfig) -> Result<(), WmError> {
        let t = self.obs.len();
        if t < 2 {
            return Err(WmError::ShortSequence { len: t });
        }
        if self.actions.len() != t || self.rewards.len() != t || self.continues.len() != t {
            return Err(WmError::RaggedSequence);
        }
        if self.obs.iter().any(|o| o.len() != cfg.obs_dim) {
            return Err(WmError::RaggedSequence);
        }
        if self.actions.iter().any(|&a| a >= cfg.n_actions) {
            return Err(WmError::BadAction);
        }
        Ok(())
    }
}

/// Scalar values of the composite loss and its parts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WmLossValues {
    pub total: f64,
    pub pred: f64,
    pub dyn_kl: f64,
    pub rep_kl: f64,
}

/// Loss nodes still on the graph, for taking gradients.
pub struct WmLossNodes {
    pub total: NodeRef,
    pub pred: NodeRef,
    pub dyn_kl: NodeRef,
    pub rep_kl: NodeRef,
}

/// One step of an imagination rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImaginedStep {
    /// Representation the action was chosen from.
    pub x: Vec<f64>,
    pub action: usize,
    /// Predicted reward at the successor state.
    pub reward: f64,
    /// Predicted continue probability at the successor state.
    pub cont: f64,
}

/// An imagination rollout of fixed depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImaginedTrajectory {
    pub steps: Vec<ImaginedStep>,
    /// Representation after the final step, for value bootstrapping.
    pub final_x: Vec<f64>,
}

/// The world model. Owns no parameters; every method takes a `ParamNodes`
/// resolved against either the raw parameter set or its low-rank adapter.
#[derive(Debug, Clone)]
pub struct Rssm {
    pub cfg: RssmConfig,
}

/// Names and shapes of every world-model parameter.
pub fn param_shapes(cfg: &RssmConfig) -> Vec<(String, Vec<usize>)> {
    let zd = cfg.z_dim();
    let ind = zd + cfg.n_actions;
    let xd = cfg.x_dim();
    let mut v: Vec<(String, Vec<usize>)> = Vec::new();
    for gate in ["z", "r", "h"] {
        v.push((format!("gru.w{gate}"), vec![cfg.h_dim, ind]));
        v.push((format!("gru.u{gate}"), vec![cfg.h_dim, cfg.h_dim]));
        v.push((format!("gru.b{gate}"), vec![cfg.h_dim]));
    }
    v.push(("enc.w1".into(), vec![cfg.hidden, cfg.h_dim + cfg.obs_dim]));
    v.push(("enc.b1".into(), vec![cfg.hidden]));
    v.push(("enc.w2".into(), vec![zd, cfg.hidden]));
    v.push(("enc.b2".into(), vec![zd]));
    v.push(("pri.w1".into(), vec![cfg.hidden, cfg.h_dim]));
    v.push(("pri.b1".into(), vec![cfg.hidden]));
    v.push(("pri.w2".into(), vec![zd, cfg.hidden]));
    v.push(("pri.b2".into(), vec![zd]));
    for head in ["rew", "con"] {
        v.push((format!("{head}.w1"), vec![cfg.hidden, xd]));
        v.push((format!("{head}.b1"), vec![cfg.hidden]));
        v.push((format!("{head}.w2"), vec![1, cfg.hidden]));
        v.push((format!("{head}.b2"), vec![1]));
    }
    v.push(("dec.w1".into(), vec![cfg.hidden, xd]));
    v.push(("dec.b1".into(), vec![cfg.hidden]));
    v.push(("dec.w2".into(), vec![cfg.obs_dim, cfg.hidden]));
    v.push(("dec.b2".into(), vec![cfg.obs_dim]));
    v
}

impl Rssm {
    pub fn new(cfg: RssmConfig) -> Self {
        Self { cfg }
    }

    /// Glorot-initialized weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        for (name, shape) in param_shapes(&self.cfg) {
            let t = if shape.len() == 2 {
                glorot_tensor(&mut rng, shape[0], shape[1])
            } else {
                Tensor::zeros(&shape)
            };
            ps.insert(&name, t, true).expect("unique parameter names");
        }
        ps
    }

    pub fn initial_state(&self) -> ModelState {
        // uniform latent probabilities as the starting mixture
        let p = 1.0 / self.cfg.classes as f64;
        ModelState { h: vec![0.0; self.cfg.h_dim], z: vec![p; self.cfg.z_dim()] }
    }

    fn one_hot_action(&self, a: usize) -> Tensor {
        let mut v = vec![0.0; self.cfg.n_actions];
        v[a] = 1.0;
        Tensor::vector(v)
    }

    fn mlp2(
        &self,
        g: &mut Graph,
        p: &ParamNodes,
        input: NodeRef,
        prefix: &str,
    ) -> Result<NodeRef, WmError> {
        let h1 = g.linear(input, p.get(&format!("{prefix}.w1")), Some(p.get(&format!("{prefix}.b1"))))?;
        let h1 = g.relu(h1);
        Ok(g.linear(h1, p.get(&format!("{prefix}.w2")), Some(p.get(&format!("{prefix}.b2"))))?)
    }

    /// Gated recurrent step `h' = f(h, z, a)` over `concat(z, onehot(a))`.
    pub fn sequence_step_g(
        &self,
        g: &mut Graph,
        p: &ParamNodes,
        h: NodeRef,
        z: NodeRef,
        action: usize,
    ) -> Result<NodeRef, WmError> {
        let a = g.constant(self.one_hot_action(action));
        let input = g.cat_cols(&[z, a])?;
        let gate = |g: &mut Graph, w: &str, u: &str, b: &str, hin: NodeRef| -> Result<NodeRef, WmError> {
            let wi = g.linear(input, p.get(w), Some(p.get(b)))?;
            let uh = g.linear(hin, p.get(u), None)?;
            Ok(g.add(wi, uh)?)
        };
        let upd = gate(g, "gru.wz", "gru.uz", "gru.bz", h)?;
        let upd = g.sigmoid(upd);
        let res = gate(g, "gru.wr", "gru.ur", "gru.br", h)?;
        let res = g.sigmoid(res);
        let gated_h = g.mul(res, h)?;
        let cand = gate(g, "gru.wh", "gru.uh", "gru.bh", gated_h)?;
        let cand = g.tanh(cand);
        // h' = (1 - u) * h + u * cand
        let keep = g.scale(upd, -1.0);
        let keep = g.add_const(keep, 1.0);
        let kh = g.mul(keep, h)?;
        let uc = g.mul(upd, cand)?;
        Ok(g.add(kh, uc)?)
    }

    /// Posterior logits `q(z | h, obs)`.
    pub fn encode_g(
        &self,
        g: &mut Graph,
        p: &ParamNodes,
        h: NodeRef,
        obs: NodeRef,
    ) -> Result<NodeRef, WmError> {
        let input = g.cat_cols(&[h, obs])?;
        self.mlp2(g, p, input, "enc")
    }

    /// Prior logits `p(z | h)`; conditioned on `h` alone by construction.
    pub fn prior_g(&self, g: &mut Graph, p: &ParamNodes, h: NodeRef) -> Result<NodeRef, WmError> {
        self.mlp2(g, p, h, "pri")
    }

    /// Reward mean, continue logit, and decoded observation from `(h, z)`.
    pub fn heads_g(
        &self,
        g: &mut Graph,
        p: &ParamNodes,
        h: NodeRef,
        z: NodeRef,
    ) -> Result<(NodeRef, NodeRef, NodeRef), WmError> {
        let x = g.cat_cols(&[h, z])?;
        let reward = self.mlp2(g, p, x, "rew")?;
        let cont_logit = self.mlp2(g, p, x, "con")?;
        let dec = self.mlp2(g, p, x, "dec")?;
        let dec = g.sigmoid(dec);
        Ok((reward, cont_logit, dec))
    }

    /// Latent realization from logits: a straight-through one-hot sample,
    /// or the softmax probabilities in mean-latent mode.
    pub fn latent_g(
        &self,
        g: &mut Graph,
        logits: NodeRef,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeRef, WmError> {
        if self.cfg.mean_latent {
            Ok(g.group_softmax(logits, self.cfg.classes)?)
        } else {
            Ok(g.st_sample(logits, self.cfg.classes, rng)?)
        }
    }

    /// Composite world-model loss over a batch of sequences.
    ///
    /// Per timestep: Gaussian reconstruction and reward likelihoods plus a
    /// Bernoulli continue likelihood form the prediction loss; the two KL
    /// terms compare posterior and prior with stop-gradients on opposite
    /// sides, each clipped from below at 1 nat (free bits). All three parts
    /// are means over timesteps and sequences.
    pub fn wm_loss_g(
        &self,
        g: &mut Graph,
        p: &ParamNodes,
        batch: &[Sequence],
        rng: &mut ChaCha8Rng,
    ) -> Result<WmLossNodes, WmError> {
        if batch.is_empty() {
            return Err(WmError::EmptyBatch);
        }
        let mut pred_terms: Vec<NodeRef> = Vec::new();
        let mut dyn_terms: Vec<NodeRef> = Vec::new();
        let mut rep_terms: Vec<NodeRef> = Vec::new();
        let mut n_steps = 0usize;
        for seq in batch {
            seq.check(&self.cfg)?;
            let t_len = seq.len();
            let mut h = g.constant(Tensor::vector(vec![0.0; self.cfg.h_dim]));
            for t in 0..t_len {
                let obs = g.constant(Tensor::vector(seq.obs[t].clone()));
                let post_logits = self.encode_g(g, p, h, obs)?;
                let prior_logits = self.prior_g(g, p, h)?;
                let z = self.latent_g(g, post_logits, rng)?;

                let (reward, cont_logit, dec) = self.heads_g(g, p, h, z)?;
                // 0.5 ||dec - obs||^2
                let diff = g.sub(dec, obs)?;
                let sq = g.mul(diff, diff)?;
                let obs_nll = g.sum_all(sq);
                let obs_nll = g.scale(obs_nll, 0.5);
                // 0.5 (r_hat - r)^2
                let r_const = g.constant(Tensor::vector(vec![seq.rewards[t]]));
                let rd = g.sub(reward, r_const)?;
                let rsq = g.mul(rd, rd)?;
                let r_nll = g.sum_all(rsq);
                let r_nll = g.scale(r_nll, 0.5);
                // Bernoulli NLL from the logit: softplus(l) - c * l
                let sp = g.softplus(cont_logit);
                let cl = g.scale(cont_logit, seq.continues[t]);
                let c_nll = g.sub(sp, cl)?;
                let c_nll = g.sum_all(c_nll);
                let s1 = g.add(obs_nll, r_nll)?;
                let step_pred = g.add(s1, c_nll)?;
                pred_terms.push(step_pred);

                // exact categorical KLs with one-sided stop-gradients
                let post_probs = g.group_softmax(post_logits, self.cfg.classes)?;
                let post_logp = g.group_log_softmax(post_logits, self.cfg.classes)?;
                let prior_logp = g.group_log_softmax(prior_logits, self.cfg.classes)?;
                let sg_probs = g.stop_grad(post_probs);
                let sg_logp = g.stop_grad(post_logp);
                let sg_prior_logp = g.stop_grad(prior_logp);

                let dyn_diff = g.sub(sg_logp, prior_logp)?;
                let dyn_el = g.mul(sg_probs, dyn_diff)?;
                let dyn_kl = g.sum_all(dyn_el);
                dyn_terms.push(g.max_const(dyn_kl, 1.0));

                let rep_diff = g.sub(post_logp, sg_prior_logp)?;
                let rep_el = g.mul(post_probs, rep_diff)?;
                let rep_kl = g.sum_all(rep_el);
                rep_terms.push(g.max_const(rep_kl, 1.0));

                n_steps += 1;
                if t + 1 < t_len {
                    h = self.sequence_step_g(g, p, h, z, seq.actions[t])?;
                }
            }
        }
        let mean = |g: &mut Graph, terms: &[NodeRef], n: usize| -> Result<NodeRef, WmError> {
            let cat = g.cat_cols(terms)?;
            let s = g.sum_all(cat);
            Ok(g.scale(s, 1.0 / n as f64))
        };
        let pred = mean(g, &pred_terms, n_steps)?;
        let dyn_kl = mean(g, &dyn_terms, n_steps)?;
        let rep_kl = mean(g, &rep_terms, n_steps)?;
        let p1 = g.scale(pred, self.cfg.beta_pred);
        let p2 = g.scale(dyn_kl, self.cfg.beta_dyn);
        let p3 = g.scale(rep_kl, self.cfg.beta_rep);
        let s = g.add(p1, p2)?;
        let total = g.add(s, p3)?;
        Ok(WmLossNodes { total, pred, dyn_kl, rep_kl })
    }

    /// Evaluate the loss parts without keeping the graph.
    pub fn wm_loss(
        &self,
        params: &ParamSet,
        batch: &[Sequence],
        rng: &mut ChaCha8Rng,
    ) -> Result<WmLossValues, WmError> {
        let mut g = Graph::new();
        g.attach(params);
        let p = ParamNodes::direct(&mut g, params);
        let nodes = self.wm_loss_g(&mut g, &p, batch, rng)?;
        Ok(WmLossValues {
            total: g.value(nodes.total).get(0),
            pred: g.value(nodes.pred).get(0),
            dyn_kl: g.value(nodes.dyn_kl).get(0),
            rep_kl: g.value(nodes.rep_kl).get(0),
        })
    }

    /// One Adam step of the composite loss on all trainable parameters.
    pub fn train_step(
        &self,
        params: &mut ParamSet,
        opt: &mut crate::numkernel::Adam,
        batch: &[Sequence],
        rng: &mut ChaCha8Rng,
    ) -> Result<WmLossValues, WmError> {
        let mut g = Graph::new();
        g.attach(params);
        let p = ParamNodes::direct(&mut g, params);
        let nodes = self.wm_loss_g(&mut g, &p, batch, rng)?;
        let values = WmLossValues {
            total: g.value(nodes.total).get(0),
            pred: g.value(nodes.pred).get(0),
            dyn_kl: g.value(nodes.dyn_kl).get(0),
            rep_kl: g.value(nodes.rep_kl).get(0),
        };
        let grads = g.grad(nodes.total)?;
        opt.step(params, &grads);
        Ok(values)
    }

    /// Forward-only posterior probabilities `q(z | h, obs)`.
    pub fn encode_probs(
        &self,
        params: &ParamSet,
        h: &[f64],
        obs: &[f64],
    ) -> Result<Vec<f64>, WmError> {
        let mut g = Graph::new();
        g.attach(params);
        let p = ParamNodes::direct(&mut g, params);
        let hn = g.constant(Tensor::vector(h.to_vec()));
        let on = g.constant(Tensor::vector(obs.to_vec()));
        let logits = self.encode_g(&mut g, &p, hn, on)?;
        let probs = g.group_softmax(logits, self.cfg.classes)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Forward-only prior probabilities `p(z | h)`.
    pub fn prior_probs(&self, params: &ParamSet, h: &[f64]) -> Result<Vec<f64>, WmError> {
        let mut g = Graph::new();
        g.attach(params);
        let p = ParamNodes::direct(&mut g, params);
        let hn = g.constant(Tensor::vector(h.to_vec()));
        let logits = self.prior_g(&mut g, &p, hn)?;
        let probs = g.group_softmax(logits, self.cfg.classes)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Forward-only heads: reward mean, continue probability, decoded grid.
    pub fn predict_heads(
        &self,
        params: &ParamSet,
        h: &[f64],
        z: &[f64],
    ) -> Result<(f64, f64, Vec<f64>), WmError> {
        let mut g = Graph::new();
        g.attach(params);
        let p = ParamNodes::direct(&mut g, params);
        let hn = g.constant(Tensor::vector(h.to_vec()));
        let zn = g.constant(Tensor::vector(z.to_vec()));
        let (r, cl, dec) = self.heads_g(&mut g, &p, hn, zn)?;
        let cont = g.sigmoid(cl);
        Ok((
            g.value(r).get(0),
            g.value(cont).get(0),
            g.value(dec).data().to_vec(),
        ))
    }

    fn sample_or_mean(&self, probs: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        use rand::Rng;
        if self.cfg.mean_latent {
            return probs.to_vec();
        }
        let mut z = vec![0.0; probs.len()];
        for (row, zrow) in probs.chunks(self.cfg.classes).zip(z.chunks_mut(self.cfg.classes)) {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut idx = self.cfg.classes - 1;
            for (i, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            zrow[idx] = 1.0;
        }
        z
    }

    /// Filtering step against a real observation: advance the recurrent
    /// state with the previous action, then read the prior (before the
    /// observation) and the posterior (after it). Returns the new state
    /// carrying a posterior latent.
    pub fn advance(
        &self,
        params: &ParamSet,
        state: &ModelState,
        action: usize,
        next_obs: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(ModelState, Vec<f64>, Vec<f64>), WmError> {
        let mut g = Graph::new();
        g.attach(params);
        let p = ParamNodes::direct(&mut g, params);
        let hn = g.constant(Tensor::vector(state.h.clone()));
        let zn = g.constant(Tensor::vector(state.z.clone()));
        let h_next = self.sequence_step_g(&mut g, &p, hn, zn, action)?;
        let prior_logits = self.prior_g(&mut g, &p, h_next)?;
        let prior_probs = g.group_softmax(prior_logits, self.cfg.classes)?;
        let on = g.constant(Tensor::vector(next_obs.to_vec()));
        let post_logits = self.encode_g(&mut g, &p, h_next, on)?;
        let post_probs = g.group_softmax(post_logits, self.cfg.classes)?;
        let h_vec = g.value(h_next).data().to_vec();
        let post = g.value(post_probs).data().to_vec();
        let prior = g.value(prior_probs).data().to_vec();
        let z = self.sample_or_mean(&post, rng);
        Ok((ModelState { h: h_vec, z }, prior, post))
    }

    /// Posterior state for the first observation of an episode.
    pub fn observe_first(
        &self,
        params: &ParamSet,
        obs: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<ModelState, WmError> {
        let init = self.initial_state();
        let post = self.encode_probs(params, &init.h, obs)?;
        let z = self.sample_or_mean(&post, rng);
        Ok(ModelState { h: init.h, z })
    }

    /// Roll the model forward `k` steps under `policy` without touching the
    /// environment: recurrent step, prior latent, prediction heads.
    pub fn imagine<F>(
        &self,
        params: &ParamSet,
        start: &ModelState,
        mut policy: F,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ImaginedTrajectory, WmError>
    where
        F: FnMut(&[f64], &mut ChaCha8Rng) -> usize,
    {
        if k == 0 {
            return Err(WmError::BadHorizon);
        }
        let mut state = start.clone();
        let mut steps = Vec::with_capacity(k);
        for _ in 0..k {
            let x = state.x();
            let action = policy(&x, rng);
            let mut g = Graph::new();
            g.attach(params);
            let p = ParamNodes::direct(&mut g, params);
            let hn = g.constant(Tensor::vector(state.h.clone()));
            let zn = g.constant(Tensor::vector(state.z.clone()));
            let h_next = self.sequence_step_g(&mut g, &p, hn, zn, action)?;
            let prior_logits = self.prior_g(&mut g, &p, h_next)?;
            let prior_probs = g.group_softmax(prior_logits, self.cfg.classes)?;
            let h_vec = g.value(h_next).data().to_vec();
            let z = self.sample_or_mean(g.value(prior_probs).data(), rng);
            let (reward, cont, _) = self.predict_heads(params, &h_vec, &z)?;
            state = ModelState { h: h_vec, z };
            steps.push(ImaginedStep { x, action, reward, cont });
        }
        Ok(ImaginedTrajectory { steps, final_x: state.x() })
    }
}
