//! The value critic: a small MLP over model states, regressed on λ-return
//! targets with a slow EMA copy as a regularizer, plus the literal K-step
//! lookahead value used by theory-facing evaluations.

use rand_chacha::ChaCha8Rng;

use crate::numkernel::{glorot_tensor, Adam, Graph, NodeRef, ParamSet, Tensor};
use crate::worldmodel::{ImaginedTrajectory, ModelState, Rssm};

use super::{lambda_returns, ACConfig, AgentError};

/// Names and shapes of the critic head.
fn critic_shapes(x_dim: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        ("cri.w1".into(), vec![hidden, x_dim]),
        ("cri.b1".into(), vec![hidden]),
        ("cri.w2".into(), vec![1, hidden]),
        ("cri.b2".into(), vec![1]),
    ]
}

/// Value head plus its slow EMA copy.
#[derive(Debug, Clone)]
pub struct Critic {
    pub x_dim: usize,
    pub hidden: usize,
    pub params: ParamSet,
    /// Slow copy, updated by exponential moving average after each step.
    pub slow: ParamSet,
}

/// Parts of one critic regression step.
#[derive(Debug, Clone, Copy)]
pub struct CriticLoss {
    pub total: f64,
    /// Squared error against the λ-return targets.
    pub regress: f64,
    /// Squared error against the slow copy's values.
    pub ema_reg: f64,
}

impl Critic {
    /// Glorot weights, zero biases; the slow copy starts identical.
    pub fn new(x_dim: usize, hidden: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in critic_shapes(x_dim, hidden) {
            let t = if shape.len() == 2 {
                glorot_tensor(&mut rng, shape[0], shape[1])
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(&name, t, true).expect("unique critic names");
        }
        let mut slow = params.clone();
        slow.set_all_trainable(false);
        Self { x_dim, hidden, params, slow }
    }

    /// Zero every weight, making the value identically 0. Test scaffolding
    /// for updates that should see a neutral baseline.
    pub fn zero(&mut self) {
        for name in self.params.names().cloned().collect::<Vec<_>>() {
            let shape = self.params.value(&name).unwrap().shape().to_vec();
            self.params.set_value(&name, Tensor::zeros(&shape)).unwrap();
            self.slow.set_value(&name, Tensor::zeros(&shape)).unwrap();
        }
    }

    fn value_with(&self, params: &ParamSet, x: &[f64]) -> Result<f64, AgentError> {
        let mut g = Graph::new();
        g.attach(params);
        let node = self.value_g(&mut g, x)?;
        Ok(g.value(node).get(0))
    }

    /// Value node on an existing graph with the critic parameters attached.
    fn value_g(&self, g: &mut Graph, x: &[f64]) -> Result<NodeRef, AgentError> {
        let xn = g.constant(Tensor::vector(x.to_vec()));
        let w1 = g.p("cri.w1");
        let b1 = g.p("cri.b1");
        let w2 = g.p("cri.w2");
        let b2 = g.p("cri.b2");
        let h1 = g.linear(xn, w1, Some(b1))?;
        let h1 = g.relu(h1);
        Ok(g.linear(h1, w2, Some(b2))?)
    }

    /// Fast-weight value v_ψ(x).
    pub fn value(&self, x: &[f64]) -> Result<f64, AgentError> {
        self.value_with(&self.params, x)
    }

    /// Slow-copy value.
    pub fn value_slow(&self, x: &[f64]) -> Result<f64, AgentError> {
        self.value_with(&self.slow, x)
    }

    /// Pull the slow copy toward the fast weights:
    /// `slow = decay * slow + (1 - decay) * fast`.
    pub fn ema_update(&mut self, decay: f64) {
        for name in self.params.names().cloned().collect::<Vec<_>>() {
            let fast = self.params.value(&name).unwrap();
            let mut s = self.slow.value(&name).unwrap().map(|v| v * decay);
            s.axpy(1.0 - decay, fast);
            self.slow.set_value(&name, s).unwrap();
        }
    }
}

/// One regression step of the critic on an imagined trajectory: squared
/// error of v_ψ against stop-gradient λ-returns plus a squared pull toward
/// the slow copy, then an EMA update of the slow copy.
pub fn critic_update(
    traj: &ImaginedTrajectory,
    critic: &mut Critic,
    cfg: &ACConfig,
    opt: &mut Adam,
) -> Result<CriticLoss, AgentError> {
    if traj.steps.is_empty() {
        return Err(AgentError::EmptyTrajectory);
    }
    let h = traj.steps.len();
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
    let targets = lambda_returns(&rewards, &values, &continues, cfg.gamma, cfg.lambda)?;
    let slow_values: Vec<f64> = traj
        .steps
        .iter()
        .map(|s| critic.value_slow(&s.x))
        .collect::<Result<_, _>>()?;

    let mut g = Graph::new();
    g.attach(&critic.params);
    let mut regress_terms: Vec<NodeRef> = Vec::with_capacity(h);
    let mut ema_terms: Vec<NodeRef> = Vec::with_capacity(h);
    for (t, step) in traj.steps.iter().enumerate() {
        let v = critic.value_g(&mut g, &step.x)?;
        let target = g.constant(Tensor::vector(vec![targets[t]]));
        let d = g.sub(v, target)?;
        let sq = g.mul(d, d)?;
        regress_terms.push(sq);
        let slow = g.constant(Tensor::vector(vec![slow_values[t]]));
        let ds = g.sub(v, slow)?;
        let sqs = g.mul(ds, ds)?;
        ema_terms.push(sqs);
    }
    let mean = |g: &mut Graph, terms: &[NodeRef]| -> Result<NodeRef, AgentError> {
        let cat = g.cat_cols(terms)?;
        let s = g.sum_all(cat);
        Ok(g.scale(s, 1.0 / h as f64))
    };
    let regress = mean(&mut g, &regress_terms)?;
    let ema_reg = mean(&mut g, &ema_terms)?;
    let total = g.add(regress, ema_reg)?;
    let loss = CriticLoss {
        total: g.value(total).get(0),
        regress: g.value(regress).get(0),
        ema_reg: g.value(ema_reg).get(0),
    };
    let grads = g.grad(total)?;
    opt.step(&mut critic.params, &grads);
    critic.ema_update(cfg.ema_decay);
    Ok(loss)
}

/// Literal K-step lookahead value of a model state:
/// `sum_{i=1..K} γ^i r_i + γ^K v(x_K)`, with rewards and the terminal state
/// imagined under the world model and the terminal value read from the
/// critic. Every term carries at least one factor of γ, so γ = 0 gives 0.
pub fn lookahead_value<F>(
    rssm: &Rssm,
    wm_params: &ParamSet,
    start: &ModelState,
    policy: F,
    critic: &Critic,
    k: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, AgentError>
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> usize,
{
    let traj = rssm.imagine(wm_params, start, policy, k, rng)?;
    let mut total = 0.0;
    let mut disc = 1.0;
    for step in &traj.steps {
        disc *= gamma;
        total += disc * step.reward;
    }
    total += disc * critic.value(&traj.final_x)?;
    Ok(total)
}
