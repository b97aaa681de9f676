//! Finetuning strategies: the adaptive loop plus the fixed baselines it is
//! compared against. One step collects an episode, estimates both
//! mismatches, decides, and updates exactly one component.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{actor_update, ACConfig, Critic, PolicyEnsemble, UpdateMode};
use crate::drivesim::{
    evaluate_policy, yielding_follower_action, DriveSim, EvalResult, RewardWeights, TaskConfig,
    TerminationCause,
};
use crate::numkernel::{Adam, ParamSet};
use crate::theory::UpdateChoice;
use crate::worldmodel::{model_finetune_step, ModelState, Rssm, RssmLora};

use super::buffer::{BufferRole, ReplayBuffer, Transition};
use super::mismatch::{
    decide, estimate_dynamics_mismatch, policy_mismatch_qboltzmann, policy_mismatch_snapshot,
    AdaWMConfig, MismatchReport, PolicyRefMode,
};
use super::AdaptError;

/// Named finetuning strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Adaptive: decide per step from the mismatch estimates.
    AdaWm,
    /// Always update the dynamics model.
    ModelOnly,
    /// Always update the ensemble weights.
    PolicyOnly,
    /// Strictly alternate model, policy, model, ...
    Alternate,
    /// Evaluate only; never update anything.
    None,
}

impl FromStr for Strategy {
    type Err = AdaptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adawm" => Ok(Self::AdaWm),
            "model-only" => Ok(Self::ModelOnly),
            "policy-only" => Ok(Self::PolicyOnly),
            "alternate" => Ok(Self::Alternate),
            "none" => Ok(Self::None),
            other => Err(AdaptError::UnknownStrategy(other.to_string())),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AdaWm => "adawm",
            Self::ModelOnly => "model-only",
            Self::PolicyOnly => "policy-only",
            Self::Alternate => "alternate",
            Self::None => "none",
        })
    }
}

/// How one step chooses its update target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatch {
    /// Apply the threshold rule to the estimates.
    Rule,
    /// Update the named component regardless of the estimates.
    Forced(UpdateChoice),
    /// Estimate and log, but change nothing.
    Skip,
}

/// Everything the adaptation loop mutates.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub rssm: Rssm,
    pub lora: RssmLora,
    pub ensemble: PolicyEnsemble,
    pub critic: Critic,
    /// Frozen pretraining policy, the snapshot-mode reference.
    pub snapshot: PolicyEnsemble,
    /// New-task experience (the paper's W).
    pub w: ReplayBuffer,
    pub episodes: u64,
}

impl AdaptState {
    pub fn new(
        rssm: Rssm,
        lora: RssmLora,
        ensemble: PolicyEnsemble,
        critic: Critic,
        capacity: usize,
    ) -> Self {
        let snapshot = ensemble.clone();
        Self {
            rssm,
            lora,
            ensemble,
            critic,
            snapshot,
            w: ReplayBuffer::new(capacity, BufferRole::NewTask),
            episodes: 0,
        }
    }
}

/// Summary of one collected episode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub steps: usize,
    pub mean_ttc: f64,
    pub success: bool,
}

/// Optimizers owned by the finetuning loop; kept outside `AdaptState` so
/// Adam's moment buffers survive across steps.
#[derive(Debug)]
pub struct FinetuneOpts {
    pub model: Adam,
    pub policy: Adam,
}

impl FinetuneOpts {
    pub fn new(cfg: &ACConfig) -> Self {
        Self {
            model: Adam::new(cfg.actor_lr.max(1e-4), cfg.adam_eps, Some(cfg.grad_clip)),
            policy: Adam::new(cfg.actor_lr.max(1e-3), cfg.adam_eps, Some(cfg.grad_clip)),
        }
    }
}

/// Roll one episode with the current model and policy and append every
/// transition to the new-task buffer. With probability `assist`, each step
/// takes the route-following action instead of the policy's — exploration
/// scaffolding for early training.
pub fn collect_episode(
    state: &mut AdaptState,
    task: &TaskConfig,
    weights: &RewardWeights,
    seed: u64,
    assist: f64,
    assist_speed: f64,
) -> Result<EpisodeStats, AdaptError> {
    let params = state.lora.effective()?;
    let episode = state.episodes;
    state.episodes += 1;
    collect_episode_with(
        &state.rssm,
        &params,
        &state.ensemble,
        &mut state.w,
        episode,
        task,
        weights,
        seed,
        assist,
        assist_speed,
    )
}

/// Component-level variant of [`collect_episode`], for callers that train
/// the world-model parameters directly rather than through an adapter.
#[allow(clippy::too_many_arguments)]
pub fn collect_episode_with(
    rssm: &Rssm,
    params: &ParamSet,
    ensemble: &PolicyEnsemble,
    w: &mut ReplayBuffer,
    episode: u64,
    task: &TaskConfig,
    weights: &RewardWeights,
    seed: u64,
    assist: f64,
    assist_speed: f64,
) -> Result<EpisodeStats, AdaptError> {
    let mut sim = DriveSim::new(task.clone(), weights.clone())?;
    let obs0 = sim.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_6c6c);

    let mut obs_vec = obs0.to_vec();
    let mut ms = rssm.observe_first(params, &obs_vec, &mut rng)?;
    let mut ttc_sum = 0.0;
    let mut steps = 0usize;
    let success;
    loop {
        let action = if assist > 0.0 && rng.gen::<f64>() < assist {
            yielding_follower_action(&sim, assist_speed)
        } else {
            ensemble.act(&ms.x(), &mut rng)?.0
        };
        let res = sim.step(action)?;
        w.push(Transition {
            obs: obs_vec,
            action,
            reward: res.reward,
            cont: if res.terminated { 0.0 } else { 1.0 },
            episode,
        });
        ttc_sum += res.ttc;
        steps += 1;
        if res.terminated {
            success = res.cause == Some(TerminationCause::Goal);
            break;
        }
        obs_vec = res.observation.to_vec();
        ms = rssm.advance(params, &ms, action, &obs_vec, &mut rng)?.0;
    }
    Ok(EpisodeStats { steps, mean_ttc: ttc_sum / steps as f64, success })
}

/// Evaluate the current model+policy pair on a task: the policy filters the
/// world model against each real observation and acts on the model state.
pub fn evaluate_agent(
    state: &AdaptState,
    task: &TaskConfig,
    weights: &RewardWeights,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult, AdaptError> {
    let params = state.lora.effective()?;
    evaluate_agent_with(&state.rssm, &params, &state.ensemble, task, weights, episodes, seed)
}

/// Component-level variant of [`evaluate_agent`].
pub fn evaluate_agent_with(
    rssm: &Rssm,
    params: &ParamSet,
    ensemble: &PolicyEnsemble,
    task: &TaskConfig,
    weights: &RewardWeights,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult, AdaptError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let mut filt: Option<ModelState> = None;
    let mut last_action = 0usize;
    let result = evaluate_policy(
        |obs, sim| {
            let v = obs.to_vec();
            let ms = if sim.steps() == 0 {
                rssm.observe_first(params, &v, &mut rng)
                    .expect("filtering cannot fail on well-formed observations")
            } else {
                rssm.advance(
                    params,
                    filt.as_ref().expect("a state exists after the first step"),
                    last_action,
                    &v,
                    &mut rng,
                )
                .expect("filtering cannot fail on well-formed observations")
                .0
            };
            let (a, _) = ensemble
                .act(&ms.x(), &mut rng)
                .expect("the ensemble matches the model's state width");
            filt = Some(ms);
            last_action = a;
            a
        },
        task,
        weights,
        episodes,
        seed,
    )?;
    Ok(result)
}

/// Filtered model states from sampled buffer windows, for policy-mismatch
/// estimation and imagination starts.
fn sample_states(
    state: &AdaptState,
    params: &ParamSet,
    count: usize,
    seq_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ModelState>, AdaptError> {
    let windows = state.w.sample_windows(count.div_ceil(seq_len.max(2) - 1), seq_len, rng)?;
    let mut out = Vec::with_capacity(count);
    'outer: for window in &windows {
        let mut ms = state.rssm.observe_first(params, &window[0].obs, rng)?;
        out.push(ms.clone());
        if out.len() == count {
            break;
        }
        for t in 1..window.len() {
            ms = state
                .rssm
                .advance(params, &ms, window[t - 1].action, &window[t].obs, rng)?
                .0;
            out.push(ms.clone());
            if out.len() == count {
                break 'outer;
            }
        }
    }
    Ok(out)
}

/// One adaptation step: collect, estimate, decide, and update exactly one
/// component (unless dispatched to skip).
#[allow(clippy::too_many_arguments)]
pub fn adawm_step(
    state: &mut AdaptState,
    task: &TaskConfig,
    weights: &RewardWeights,
    cfg: &AdaWMConfig,
    ac: &ACConfig,
    opts: &mut FinetuneOpts,
    dispatch: Dispatch,
    rng: &mut ChaCha8Rng,
) -> Result<MismatchReport, AdaptError> {
    let episode_seed: u64 = rng.gen();
    collect_episode(state, task, weights, episode_seed, 0.0, 0.0)?;

    let params = state.lora.effective()?;
    let n_windows = cfg.batch.div_ceil(cfg.seq_len.max(2) - 1);
    let windows = state.w.sample_windows(n_windows, cfg.seq_len, rng)?;
    let (e_dyn, n_dyn) = estimate_dynamics_mismatch(&state.rssm, &params, &windows, rng)?;

    let n_states = (cfg.batch / 4).max(8);
    let states = sample_states(state, &params, n_states, cfg.seq_len, rng)?;
    let (e_pi, n_pi) = match cfg.policy_ref {
        PolicyRefMode::QBoltzmann => policy_mismatch_qboltzmann(
            &state.rssm,
            &params,
            &state.ensemble,
            &state.critic,
            &states,
            ac.gamma,
            cfg.tau,
            rng,
        )?,
        PolicyRefMode::PretrainedSnapshot => {
            policy_mismatch_snapshot(&state.ensemble, &state.snapshot, &states)?
        }
    };

    let decision = match dispatch {
        Dispatch::Rule => decide(e_dyn, e_pi, cfg.c),
        Dispatch::Forced(choice) => choice,
        Dispatch::Skip => decide(e_dyn, e_pi, cfg.c),
    };

    if dispatch != Dispatch::Skip {
        match decision {
            UpdateChoice::ModelUpdate => {
                for _ in 0..cfg.finetune_iters {
                    let batch = state.w.sample_sequences(4, cfg.seq_len, rng)?;
                    model_finetune_step(&state.rssm, &mut state.lora, &mut opts.model, &batch, rng)?;
                }
            }
            UpdateChoice::PolicyUpdate => {
                for (i, _) in (0..cfg.finetune_iters).enumerate() {
                    let start = &states[i % states.len()];
                    let traj = {
                        let ens = &state.ensemble;
                        state.rssm.imagine(
                            &params,
                            start,
                            |x, r| ens.act(x, r).map(|(a, _)| a).unwrap_or(0),
                            ac.horizon,
                            rng,
                        )?
                    };
                    actor_update(
                        &traj,
                        &mut state.ensemble,
                        &state.critic,
                        ac,
                        UpdateMode::WeightsOnly,
                        &mut opts.policy,
                    )?;
                }
            }
        }
    }

    Ok(MismatchReport { e_dyn, e_pi, c: cfg.c, decision, n_dyn, n_pi })
}

/// One logged iteration of a strategy run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyRow {
    pub step: usize,
    pub e_dyn: f64,
    pub e_pi: f64,
    pub decision: UpdateChoice,
    /// Whether an update was actually applied this step.
    pub updated: bool,
    pub ttc: f64,
    pub sr: f64,
}

/// Execute a strategy for `budget` steps, evaluating every `eval_every`
/// steps (and once up front); between evaluations rows carry the latest
/// measured values.
#[allow(clippy::too_many_arguments)]
pub fn run_strategy(
    strategy: Strategy,
    state: &mut AdaptState,
    task: &TaskConfig,
    weights: &RewardWeights,
    cfg: &AdaWMConfig,
    ac: &ACConfig,
    budget: usize,
    eval_every: usize,
    eval_episodes: usize,
    seed: u64,
) -> Result<Vec<StrategyRow>, AdaptError> {
    let mut opts = FinetuneOpts::new(ac);
    run_strategy_from(
        strategy,
        state,
        task,
        weights,
        cfg,
        ac,
        &mut opts,
        0,
        budget,
        eval_every,
        eval_episodes,
        seed,
        &mut |_| Ok(()),
    )
}

/// Like [`run_strategy`], but starting at `start_step` (for resumed runs)
/// and invoking `on_row` as each row is produced. Every step reseeds its
/// generator from `(seed, step)`, so a resumed run walks the same step
/// sequence an uninterrupted run would.
#[allow(clippy::too_many_arguments)]
pub fn run_strategy_from(
    strategy: Strategy,
    state: &mut AdaptState,
    task: &TaskConfig,
    weights: &RewardWeights,
    cfg: &AdaWMConfig,
    ac: &ACConfig,
    opts: &mut FinetuneOpts,
    start_step: usize,
    budget: usize,
    eval_every: usize,
    eval_episodes: usize,
    seed: u64,
    on_row: &mut dyn FnMut(&StrategyRow) -> Result<(), AdaptError>,
) -> Result<Vec<StrategyRow>, AdaptError> {
    let mut rows = Vec::with_capacity(budget.saturating_sub(start_step));
    // seeded so a run resumed at `start_step` reproduces the evaluation a
    // continuous run refreshed at the end of step `start_step - 1`
    let mut eval =
        evaluate_agent(state, task, weights, eval_episodes, seed.wrapping_add(start_step as u64))?;
    for step in start_step..budget {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (step as u64)
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(0x517c_c1b7),
        );
        let dispatch = match strategy {
            Strategy::AdaWm => Dispatch::Rule,
            Strategy::ModelOnly => Dispatch::Forced(UpdateChoice::ModelUpdate),
            Strategy::PolicyOnly => Dispatch::Forced(UpdateChoice::PolicyUpdate),
            Strategy::Alternate => Dispatch::Forced(if step % 2 == 0 {
                UpdateChoice::ModelUpdate
            } else {
                UpdateChoice::PolicyUpdate
            }),
            Strategy::None => Dispatch::Skip,
        };
        let report = adawm_step(state, task, weights, cfg, ac, opts, dispatch, &mut rng)?;
        if eval_every > 0 && (step + 1) % eval_every == 0 {
            eval = evaluate_agent(state, task, weights, eval_episodes, seed.wrapping_add(step as u64 + 1))?;
        }
        let row = StrategyRow {
            step,
            e_dyn: report.e_dyn,
            e_pi: report.e_pi,
            decision: report.decision,
            updated: strategy != Strategy::None,
            ttc: eval.mean_ttc,
            sr: eval.success_rate,
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivesim::{N_ACTIONS, OBS_LEN};
    use crate::worldmodel::RssmConfig;

    /// A compact world-model shape compatible with the real simulator.
    fn small_cfg() -> RssmConfig {
        RssmConfig {
            obs_dim: OBS_LEN,
            n_actions: N_ACTIONS,
            latents: 4,
            classes: 4,
            h_dim: 12,
            hidden: 16,
            beta_pred: 1.0,
            beta_dyn: 0.5,
            beta_rep: 0.1,
            mean_latent: false,
        }
    }

    fn small_state(seed: u64) -> AdaptState {
        let rssm = Rssm::new(small_cfg());
        let params = rssm.init_params(seed);
        let lora = RssmLora::new(params, 4, seed ^ 1).unwrap();
        let x_dim = rssm.cfg.x_dim();
        let ensemble = PolicyEnsemble::new_single(x_dim, 16, N_ACTIONS, seed ^ 2);
        let critic = Critic::new(x_dim, 16, seed ^ 3);
        AdaptState::new(rssm, lora, ensemble, critic, 10_000)
    }

    fn test_cfg() -> AdaWMConfig {
        AdaWMConfig { batch: 24, finetune_iters: 2, ..AdaWMConfig::default() }
    }

    fn quick_task() -> (TaskConfig, RewardWeights) {
        let mut task = TaskConfig::builtin("right-turn-moderate").unwrap();
        task.step_limit = 40;
        (task, RewardWeights::default())
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::AdaWm,
            Strategy::ModelOnly,
            Strategy::PolicyOnly,
            Strategy::Alternate,
            Strategy::None,
        ] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!(
            "hillclimb".parse::<Strategy>(),
            Err(AdaptError::UnknownStrategy(_))
        ));
    }

    #[test]
    fn collect_episode_is_deterministic_and_fills_the_buffer() {
        let (task, weights) = quick_task();
        let mut a = small_state(0);
        let mut b = small_state(0);
        let sa = collect_episode(&mut a, &task, &weights, 7, 0.0, 0.0).unwrap();
        let sb = collect_episode(&mut b, &task, &weights, 7, 0.0, 0.0).unwrap();
        assert_eq!(sa.steps, sb.steps);
        assert_eq!(a.w.len(), sa.steps);
        let ra: Vec<f64> = a.w.iter().map(|t| t.reward).collect();
        let rb: Vec<f64> = b.w.iter().map(|t| t.reward).collect();
        assert_eq!(ra, rb);
        // final transition carries the terminal flag
        assert_eq!(a.w.iter().last().unwrap().cont, 0.0);
    }

    #[test]
    fn model_update_touches_only_the_lora_coefficients() {
        let (task, weights) = quick_task();
        let mut state = small_state(1);
        let base_before = state.lora.base.to_bytes();
        let coeffs_before = state.lora.coeffs.to_bytes();
        let ens_before = state.ensemble.params.to_bytes();
        let ac = ACConfig::fast();
        let mut opts = FinetuneOpts::new(&ac);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        adawm_step(
            &mut state,
            &task,
            &weights,
            &test_cfg(),
            &ac,
            &mut opts,
            Dispatch::Forced(UpdateChoice::ModelUpdate),
            &mut rng,
        )
        .unwrap();
        assert_eq!(state.lora.base.to_bytes(), base_before, "base moved");
        assert_eq!(state.ensemble.params.to_bytes(), ens_before, "policy moved");
        assert_ne!(state.lora.coeffs.to_bytes(), coeffs_before, "coefficients froze");
    }

    #[test]
    fn policy_update_touches_only_the_ensemble_weights() {
        let (task, weights) = quick_task();
        let mut state = small_state(2);
        // two units so the simplex weights have a gradient to follow
        let extra = state.ensemble.subunit(0);
        let mut perturbed = extra.clone();
        for name in perturbed.names().cloned().collect::<Vec<_>>() {
            let v = perturbed.value(&name).unwrap().map(|a| a + 0.05);
            perturbed.set_value(&name, v).unwrap();
        }
        state.ensemble.snapshot_subunit(&perturbed).unwrap();
        let lora_before = (state.lora.base.to_bytes(), state.lora.coeffs.to_bytes());
        let subs_before: Vec<Vec<u8>> =
            (0..state.ensemble.d).map(|i| state.ensemble.subunit(i).to_bytes()).collect();
        let logits_before = state.ensemble.params.value("ens.logits").unwrap().clone();
        let ac = ACConfig::fast();
        let mut opts = FinetuneOpts::new(&ac);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        adawm_step(
            &mut state,
            &task,
            &weights,
            &test_cfg(),
            &ac,
            &mut opts,
            Dispatch::Forced(UpdateChoice::PolicyUpdate),
            &mut rng,
        )
        .unwrap();
        assert_eq!(state.lora.base.to_bytes(), lora_before.0);
        assert_eq!(state.lora.coeffs.to_bytes(), lora_before.1, "model moved");
        for (i, b) in subs_before.iter().enumerate() {
            assert_eq!(&state.ensemble.subunit(i).to_bytes(), b, "sub-unit {i} moved");
        }
        let logits_after = state.ensemble.params.value("ens.logits").unwrap();
        assert!(
            logits_before.data().iter().zip(logits_after.data()).any(|(a, b)| a != b),
            "weights never moved"
        );
    }

    #[test]
    fn extreme_thresholds_force_each_branch() {
        let (task, weights) = quick_task();
        let ac = ACConfig::fast();
        let mut state = small_state(3);
        let mut opts = FinetuneOpts::new(&ac);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg_hi = AdaWMConfig { c: 1e9, ..test_cfg() };
        let report = adawm_step(
            &mut state, &task, &weights, &cfg_hi, &ac, &mut opts, Dispatch::Rule, &mut rng,
        )
        .unwrap();
        assert!(report.e_pi > 0.0, "q-boltzmann mismatch vanished unexpectedly");
        assert_eq!(report.decision, UpdateChoice::PolicyUpdate);

        let cfg_lo = AdaWMConfig { c: 1e-9, ..test_cfg() };
        let report = adawm_step(
            &mut state, &task, &weights, &cfg_lo, &ac, &mut opts, Dispatch::Rule, &mut rng,
        )
        .unwrap();
        assert!(report.e_dyn > 0.0);
        assert_eq!(report.decision, UpdateChoice::ModelUpdate);
    }

    #[test]
    fn none_strategy_is_bitwise_inert() {
        let (task, weights) = quick_task();
        let mut state = small_state(4);
        let before = (
            state.lora.base.to_bytes(),
            state.lora.coeffs.to_bytes(),
            state.ensemble.params.to_bytes(),
        );
        let rows = run_strategy(
            Strategy::None,
            &mut state,
            &task,
            &weights,
            &test_cfg(),
            &ACConfig::fast(),
            2,
            0,
            1,
            11,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| !r.updated));
        assert_eq!(state.lora.base.to_bytes(), before.0);
        assert_eq!(state.lora.coeffs.to_bytes(), before.1);
        assert_eq!(state.ensemble.params.to_bytes(), before.2);
    }

    #[test]
    fn alternate_strategy_alternates() {
        let (task, weights) = quick_task();
        let mut state = small_state(5);
        let rows = run_strategy(
            Strategy::Alternate,
            &mut state,
            &task,
            &weights,
            &test_cfg(),
            &ACConfig::fast(),
            4,
            0,
            1,
            13,
        )
        .unwrap();
        let decisions: Vec<UpdateChoice> = rows.iter().map(|r| r.decision).collect();
        assert_eq!(
            decisions,
            vec![
                UpdateChoice::ModelUpdate,
                UpdateChoice::PolicyUpdate,
                UpdateChoice::ModelUpdate,
                UpdateChoice::PolicyUpdate,
            ]
        );
    }

    #[test]
    fn run_strategy_is_deterministic() {
        let (task, weights) = quick_task();
        let run = || {
            let mut state = small_state(6);
            run_strategy(
                Strategy::AdaWm,
                &mut state,
                &task,
                &weights,
                &test_cfg(),
                &ACConfig::fast(),
                2,
                2,
                1,
                17,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.e_dyn, y.e_dyn);
            assert_eq!(x.e_pi, y.e_pi);
            assert_eq!(x.decision, y.decision);
            assert_eq!(x.sr, y.sr);
            assert_eq!(x.ttc, y.ttc);
        }
    }
}
