//! Mismatch estimation: total-variation distances measuring how far the
//! dynamics model and the policy have drifted from the new task, plus the
//! threshold rule that picks which component to update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Critic, PolicyEnsemble};
use crate::numkernel::ParamSet;
use crate::theory::{exact_q, optimal_policy, TabularMdp, UpdateChoice};
use crate::worldmodel::Rssm;

use super::buffer::Transition;
use super::AdaptError;

/// Which reference the policy-mismatch estimator compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyRefMode {
    /// Boltzmann distribution over one-step action values under the current
    /// model and critic — a stand-in for the unobservable optimal policy.
    QBoltzmann,
    /// Literal distance to the frozen pretraining policy.
    PretrainedSnapshot,
}

/// Adaptation hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaWMConfig {
    /// Decision threshold: the model is updated iff `E_dyn > C · E_pi`.
    pub c: f64,
    /// Transitions / states per mismatch estimate.
    pub batch: usize,
    pub policy_ref: PolicyRefMode,
    /// Boltzmann temperature for the q-boltzmann reference.
    pub tau: f64,
    /// Gradient iterations applied to the chosen component per step.
    pub finetune_iters: usize,
    /// Sequence length cap for sampled windows.
    pub seq_len: usize,
}

impl Default for AdaWMConfig {
    fn default() -> Self {
        Self {
            c: 5.0,
            batch: 256,
            policy_ref: PolicyRefMode::QBoltzmann,
            tau: 1.0,
            finetune_iters: 10,
            seq_len: 8,
        }
    }
}

/// Outcome of one mismatch evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MismatchReport {
    pub e_dyn: f64,
    pub e_pi: f64,
    pub c: f64,
    pub decision: UpdateChoice,
    /// Transitions behind the dynamics estimate.
    pub n_dyn: usize,
    /// States behind the policy estimate.
    pub n_pi: usize,
}

/// Total variation between two categorical distributions on one support.
pub fn tv_categorical(p: &[f64], q: &[f64]) -> Result<f64, AdaptError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(AdaptError::SupportMismatch { p: p.len(), q: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Mean TV across the latent rows of two stacked categorical vectors.
pub fn mean_row_tv(post: &[f64], prior: &[f64], classes: usize) -> Result<f64, AdaptError> {
    if post.len() != prior.len() || post.is_empty() || post.len() % classes != 0 {
        return Err(AdaptError::SupportMismatch { p: post.len(), q: prior.len() });
    }
    let rows = post.len() / classes;
    let mut total = 0.0;
    for (pr, qr) in post.chunks(classes).zip(prior.chunks(classes)) {
        total += tv_categorical(pr, qr)?;
    }
    Ok(total / rows as f64)
}

/// Boltzmann distribution `softmax(values / tau)`.
pub fn boltzmann(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The threshold rule: update the model iff its mismatch strictly dominates
/// `C` times the policy mismatch; ties fall to the policy branch.
pub fn decide(e_dyn: f64, e_pi: f64, c: f64) -> UpdateChoice {
    if e_dyn > c * e_pi {
        UpdateChoice::ModelUpdate
    } else {
        UpdateChoice::PolicyUpdate
    }
}

/// Dynamics mismatch on real new-task windows: filter each window through
/// the model and average the TV between the evidence-informed posterior and
/// the model's prior at every transition. Returns the mean and the number of
/// transitions used.
pub fn estimate_dynamics_mismatch(
    rssm: &Rssm,
    params: &ParamSet,
    windows: &[Vec<Transition>],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize), AdaptError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for window in windows {
        if window.len() < 2 {
            continue;
        }
        let mut state = rssm.observe_first(params, &window[0].obs, rng)?;
        for t in 1..window.len() {
            let (next, prior, post) =
                rssm.advance(params, &state, window[t - 1].action, &window[t].obs, rng)?;
            total += mean_row_tv(&post, &prior, rssm.cfg.classes)?;
            n += 1;
            state = next;
        }
    }
    if n == 0 {
        return Err(AdaptError::EmptyBuffer);
    }
    Ok((total / n as f64, n))
}

/// One-step action values of a model state under the current model and
/// critic: `q_a = r̂ + γ · ĉ · v(x')`, imagined with common random numbers
/// across actions.
pub fn one_step_action_values(
    rssm: &Rssm,
    params: &ParamSet,
    critic: &Critic,
    state: &crate::worldmodel::ModelState,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AdaptError> {
    let base_seed: u64 = rng.gen();
    let mut q = Vec::with_capacity(rssm.cfg.n_actions);
    for a in 0..rssm.cfg.n_actions {
        let mut child = ChaCha8Rng::seed_from_u64(base_seed);
        let traj = rssm.imagine(params, state, |_, _| a, 1, &mut child)?;
        let step = &traj.steps[0];
        q.push(step.reward + gamma * step.cont * critic.value(&traj.final_x)?);
    }
    Ok(q)
}

/// Policy mismatch, q-boltzmann mode: mean TV between the current policy
/// and a Boltzmann distribution over one-step action values.
pub fn policy_mismatch_qboltzmann(
    rssm: &Rssm,
    params: &ParamSet,
    ensemble: &PolicyEnsemble,
    critic: &Critic,
    states: &[crate::worldmodel::ModelState],
    gamma: f64,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize), AdaptError> {
    if states.is_empty() {
        return Err(AdaptError::EmptyBuffer);
    }
    let mut total = 0.0;
    for state in states {
        let pi = ensemble.policy_dist(&state.x())?;
        let q = one_step_action_values(rssm, params, critic, state, gamma, rng)?;
        total += tv_categorical(&pi, &boltzmann(&q, tau))?;
    }
    Ok((total / states.len() as f64, states.len()))
}

/// Policy mismatch, snapshot mode: the worst-case TV between the current
/// policy and the frozen pretraining policy over the sampled states.
pub fn policy_mismatch_snapshot(
    ensemble: &PolicyEnsemble,
    snapshot: &PolicyEnsemble,
    states: &[crate::worldmodel::ModelState],
) -> Result<(f64, usize), AdaptError> {
    if states.is_empty() {
        return Err(AdaptError::EmptyBuffer);
    }
    let mut worst = 0.0f64;
    for state in states {
        let x = state.x();
        let tv = tv_categorical(&ensemble.policy_dist(&x)?, &snapshot.policy_dist(&x)?)?;
        worst = worst.max(tv);
    }
    Ok((worst, states.len()))
}

/// Tabular surrogate of the dynamics estimator: sample `(s, a)` uniformly
/// and a successor from the true row; the one-hot successor plays the
/// posterior and the model row plays the prior. For deterministic true
/// dynamics the expectation is exactly the mean TV between true and model
/// rows.
pub fn tabular_dynamics_estimate(
    truth: &TabularMdp,
    model: &TabularMdp,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, AdaptError> {
    if samples == 0 {
        return Err(AdaptError::EmptyBuffer);
    }
    let mut total = 0.0;
    for _ in 0..samples {
        let s = rng.gen_range(0..truth.n_states);
        let a = rng.gen_range(0..truth.n_actions);
        let row = truth.row(s, a);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = truth.n_states - 1;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        let mut onehot = vec![0.0; truth.n_states];
        onehot[next] = 1.0;
        total += tv_categorical(&onehot, model.row(s, a))?;
    }
    Ok(total / samples as f64)
}

/// Tabular surrogate of the q-boltzmann policy estimator: sample states
/// uniformly and compare the given policy row against a Boltzmann
/// distribution over the exact optimal action values.
pub fn tabular_policy_estimate(
    mdp: &TabularMdp,
    policy: &[f64],
    tau: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, AdaptError> {
    if samples == 0 {
        return Err(AdaptError::EmptyBuffer);
    }
    let pi_star = optimal_policy(mdp).map_err(AdaptError::Theory)?;
    let q_star = exact_q(mdp, &pi_star).map_err(AdaptError::Theory)?;
    let na = mdp.n_actions;
    let mut total = 0.0;
    for _ in 0..samples {
        let s = rng.gen_range(0..mdp.n_states);
        let boltz = boltzmann(&q_star[s * na..(s + 1) * na], tau);
        total += tv_categorical(&policy[s * na..(s + 1) * na], &boltz)?;
    }
    Ok(total / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmodel::RssmConfig;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn tv_basics() {
        assert_eq!(tv_categorical(&[0.25, 0.75], &[0.25, 0.75]).unwrap(), 0.0);
        assert_eq!(
            tv_categorical(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(),
            1.0
        );
        let tv = tv_categorical(&[1.0, 0.0, 0.0, 0.0], &[0.25; 4]).unwrap();
        assert!((tv - 0.75).abs() < 1e-15);
        assert!(matches!(
            tv_categorical(&[1.0], &[0.5, 0.5]),
            Err(AdaptError::SupportMismatch { .. })
        ));
    }

    #[test]
    fn mean_row_tv_averages_rows() {
        // two rows of three classes: first identical, second disjoint
        let post = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let prior = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let v = mean_row_tv(&post, &prior, 3).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn boltzmann_limits() {
        let q = [1.0, 3.0, 2.0];
        let sharp = boltzmann(&q, 1e-3);
        assert!(sharp[1] > 0.999);
        let flat = boltzmann(&[2.0, 2.0, 2.0], 1.0);
        for p in flat {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decide_threshold_and_ties() {
        assert_eq!(decide(0.5, 0.05, 5.0), UpdateChoice::ModelUpdate);
        assert_eq!(decide(0.25, 0.05, 5.0), UpdateChoice::PolicyUpdate);
        assert_eq!(decide(0.0, 0.0, 5.0), UpdateChoice::PolicyUpdate);
    }

    #[test]
    fn decide_is_scale_consistent() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let a: f64 = r.gen_range(0.0..1.0);
            let b: f64 = r.gen_range(0.0..1.0);
            let c: f64 = r.gen_range(0.01..100.0);
            let k: f64 = r.gen_range(1e-3..1e3);
            assert_eq!(decide(a, b, c), decide(k * a, k * b, c));
        }
    }

    #[test]
    fn identical_posterior_and_prior_give_zero_dynamics_mismatch() {
        let m = Rssm::new(RssmConfig::tiny());
        let mut params = m.init_params(0);
        // zero the final layers: posterior and prior both exactly uniform
        for name in ["enc.w2", "enc.b2", "pri.w2", "pri.b2"] {
            let shape = params.value(name).unwrap().shape().to_vec();
            params
                .set_value(name, crate::numkernel::Tensor::zeros(&shape))
                .unwrap();
        }
        let window: Vec<Transition> = (0..5)
            .map(|i| Transition {
                obs: vec![0.1 * i as f64; m.cfg.obs_dim],
                action: i % m.cfg.n_actions,
                reward: 0.0,
                cont: 1.0,
                episode: 0,
            })
            .collect();
        let mut r = rng(3);
        let (e, n) = estimate_dynamics_mismatch(&m, &params, &[window], &mut r).unwrap();
        assert_eq!(n, 4);
        assert!(e.abs() < 1e-12);
    }

    #[test]
    fn dynamics_mismatch_stays_in_unit_interval() {
        let m = Rssm::new(RssmConfig::tiny());
        let params = m.init_params(7);
        let mut r = rng(4);
        let windows: Vec<Vec<Transition>> = (0..4)
            .map(|w| {
                (0..6)
                    .map(|i| Transition {
                        obs: (0..m.cfg.obs_dim)
                            .map(|j| ((w * 7 + i * 3 + j) as f64 * 0.37).sin().abs())
                            .collect(),
                        action: (w + i) % m.cfg.n_actions,
                        reward: 0.0,
                        cont: 1.0,
                        episode: w as u64,
                    })
                    .collect()
            })
            .collect();
        let (e, n) = estimate_dynamics_mismatch(&m, &params, &windows, &mut r).unwrap();
        assert_eq!(n, 20);
        assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn snapshot_mode_is_zero_at_step_zero() {
        let ens = PolicyEnsemble::new_single(10, 6, 4, 2);
        let snap = ens.clone();
        let m = Rssm::new(RssmConfig::tiny());
        let states: Vec<_> = (0..5)
            .map(|i| {
                let mut s = m.initial_state();
                s.h = vec![0.1 * i as f64; s.h.len()];
                s
            })
            .collect();
        // x_dim of tiny = 4 + 6 = 10, matching the ensemble above
        let (e, n) = policy_mismatch_snapshot(&ens, &snap, &states).unwrap();
        assert_eq!(n, 5);
        assert_eq!(e, 0.0);
    }

    /// A 4-state, 2-action chain with deterministic true dynamics.
    fn deterministic_truth() -> TabularMdp {
        let ns = 4;
        let na = 2;
        let mut p = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let next = if a == 0 { (s + 1) % ns } else { s };
                p[(s * na + a) * ns + next] = 1.0;
            }
        }
        let reward: Vec<f64> = (0..ns * na).map(|i| (i as f64 * 0.7).sin()).collect();
        let rho0 = vec![1.0 / ns as f64; ns];
        TabularMdp::new(ns, na, p, reward, 0.9, rho0).unwrap()
    }

    fn perturbed_model(truth: &TabularMdp, mix: f64) -> TabularMdp {
        let ns = truth.n_states;
        let na = truth.n_actions;
        let uniform = 1.0 / ns as f64;
        let mut p = truth.transition.clone();
        for v in p.iter_mut() {
            *v = (1.0 - mix) * *v + mix * uniform;
        }
        TabularMdp::new(ns, na, p, truth.reward.clone(), truth.gamma, truth.rho0.clone()).unwrap()
    }

    #[test]
    fn tabular_dynamics_estimate_converges_to_the_exact_mean_tv() {
        let truth = deterministic_truth();
        let model = perturbed_model(&truth, 0.4);
        // oracle: mean TV between true and model rows over all (s, a)
        let mut oracle = 0.0;
        for s in 0..truth.n_states {
            for a in 0..truth.n_actions {
                oracle += tv_categorical(truth.row(s, a), model.row(s, a)).unwrap();
            }
        }
        oracle /= (truth.n_states * truth.n_actions) as f64;
        let mut r = rng(9);
        let est = tabular_dynamics_estimate(&truth, &model, 10_000, &mut r).unwrap();
        assert!(
            (est - oracle).abs() <= 0.05,
            "estimate {est} vs oracle {oracle}"
        );
    }

    #[test]
    fn tabular_policy_estimate_tracks_the_exact_policy_tv() {
        // 3-state, 2-action task with a clear optimal action everywhere
        let ns = 3;
        let na = 2;
        let mut p = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let next = if a == 0 { (s + 1) % ns } else { s };
                p[(s * na + a) * ns + next] = 1.0;
            }
        }
        // action 0 pays, action 1 does not: optimal policy is always 0
        let mut reward = vec![0.0; ns * na];
        for s in 0..ns {
            reward[s * na] = 1.0;
        }
        let rho0 = vec![1.0 / ns as f64; ns];
        let mdp = TabularMdp::new(ns, na, p, reward, 0.9, rho0).unwrap();
        let pi_star = optimal_policy(&mdp).unwrap();

        // a blunt policy: 70/30 toward the optimal action in every state
        let policy: Vec<f64> = (0..ns).flat_map(|_| [0.7, 0.3]).collect();
        let mut oracle = 0.0;
        for s in 0..ns {
            oracle +=
                tv_categorical(&policy[s * na..(s + 1) * na], &pi_star[s * na..(s + 1) * na])
                    .unwrap();
        }
        oracle /= ns as f64;

        let mut r = rng(13);
        let est = tabular_policy_estimate(&mdp, &policy, 0.05, 10_000, &mut r).unwrap();
        assert!(
            (est - oracle).abs() <= 0.1,
            "estimate {est} vs oracle {oracle}"
        );
    }
}
