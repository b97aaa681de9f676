//! The pretrain → finetune → evaluate pipelines and the gradient-check
//! sweep backing the CLI.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapt::{
    collect_episode_with, evaluate_agent, evaluate_agent_with, run_strategy_from, AdaptError,
    AdaptState, BufferRole, FinetuneOpts, ReplayBuffer,
};
use crate::agent::{actor_update, critic_update, Critic, PolicyEnsemble, UpdateMode};
use crate::drivesim::EvalResult;
use crate::numkernel::{
    finite_diff_check, glorot_tensor, randn_tensor, Adam, Graph, NodeRef, ParamSet, Tensor,
};
use crate::worldmodel::{Rssm, RssmLora};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::metrics::{MetricsRow, MetricsWriter};
use super::HarnessError;

/// Per-step generator seed: the same mixing as the finetuning loop, so
/// every step of every run is independently reseedable.
fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x517c_c1b7)
}

pub fn pretrain_checkpoint_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    Path::new(&cfg.out_dir).join(format!("pretrain-seed{seed}.ck"))
}

pub fn finetune_csv_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    Path::new(&cfg.out_dir).join(format!("ft-{}-seed{seed}.csv", cfg.strategy))
}

fn resume_checkpoint_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    Path::new(&cfg.out_dir).join(format!("ft-{}-seed{seed}.ck", cfg.strategy))
}

/// Pretrain on the pretraining task: interleave episode collection (with
/// annealed route-follower assistance), world-model gradient steps, and
/// full-mode actor-critic updates on imagined rollouts. The checkpoint
/// keeps the best-evaluation world model and critic, and the top-scoring
/// actor snapshots become the sub-units of the finetuning ensemble. Writes
/// the checkpoint and a metrics CSV; returns the checkpoint path.
pub fn run_pretrain(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let task = cfg.resolve_task(&cfg.pretrain_task)?;
    let weights = cfg.reward;
    let pt = &cfg.pretrain;

    let rssm = Rssm::new(cfg.model.rssm_config());
    let mut params = rssm.init_params(seed);
    let x_dim = rssm.cfg.x_dim();
    let n_actions = rssm.cfg.n_actions;
    let mut actor = PolicyEnsemble::new_single(x_dim, cfg.model.actor_hidden, n_actions, seed ^ 2);
    let mut critic = Critic::new(x_dim, cfg.model.critic_hidden, seed ^ 3);
    let mut buffer = ReplayBuffer::new(ReplayBuffer::DEFAULT_CAPACITY, BufferRole::Pretrain);

    let mut wm_opt = Adam::new(pt.wm_lr, cfg.ac.adam_eps, Some(cfg.ac.grad_clip));
    let mut act_opt = Adam::new(cfg.ac.actor_lr, cfg.ac.adam_eps, Some(cfg.ac.grad_clip));
    let mut cri_opt = Adam::new(cfg.ac.critic_lr, cfg.ac.adam_eps, Some(cfg.ac.grad_clip));

    let csv_path = Path::new(&cfg.out_dir).join(format!("pretrain-seed{seed}.csv"));
    let mut csv = MetricsWriter::create(&csv_path)?;
    let budget = cfg.pretrain_steps;
    // Actor snapshots scored at each evaluation; the checkpoint keeps the
    // best-scoring world model and critic, and the ensemble's sub-units are
    // the top-scoring actors. Training at this scale is not monotone, so
    // early stopping on the periodic evaluations beats keeping the final
    // state.
    let mut candidates: Vec<(f64, usize, ParamSet)> = Vec::new();
    let mut best: Option<(f64, ParamSet, Critic)> = None;

    for step in 0..budget {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, step as u64));
        let frac = if budget > 1 { step as f64 / (budget - 1) as f64 } else { 0.0 };
        let assist = pt.assist_start + (pt.assist_end - pt.assist_start) * frac;
        collect_episode_with(
            &rssm,
            &params,
            &actor,
            &mut buffer,
            step as u64,
            &task,
            &weights,
            rng.gen(),
            assist,
            pt.assist_speed,
        )?;

        for _ in 0..pt.wm_iters {
            match buffer.sample_sequences(pt.batch_seqs, pt.seq_len, &mut rng) {
                Ok(batch) => {
                    rssm.train_step(&mut params, &mut wm_opt, &batch, &mut rng)?;
                }
                Err(AdaptError::EmptyBuffer) => break,
                Err(e) => return Err(e.into()),
            }
        }

        for _ in 0..pt.ac_iters {
            let window = match buffer.sample_windows(1, pt.seq_len, &mut rng) {
                Ok(w) => w,
                Err(AdaptError::EmptyBuffer) => break,
                Err(e) => return Err(e.into()),
            };
            let start = rssm.observe_first(&params, &window[0][0].obs, &mut rng)?;
            let traj = {
                let a = &actor;
                rssm.imagine(
                    &params,
                    &start,
                    |x, r| a.act(x, r).map(|(i, _)| i).unwrap_or(0),
                    cfg.ac.horizon,
                    &mut rng,
                )?
            };
            critic_update(&traj, &mut critic, &cfg.ac, &mut cri_opt)?;
            actor_update(&traj, &mut actor, &critic, &cfg.ac, UpdateMode::Full, &mut act_opt)?;
        }

        let final_step = step + 1 == budget;
        if final_step || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            let eval = evaluate_agent_with(
                &rssm,
                &params,
                &actor,
                &task,
                &weights,
                cfg.eval_episodes,
                seed.wrapping_add(step as u64 + 1),
            )?;
            candidates.push((eval.success_rate, step, actor.effective_actor()));
            if best.as_ref().map_or(true, |(sr, _, _)| eval.success_rate >= *sr) {
                best = Some((eval.success_rate, params.clone(), critic.clone()));
            }
            csv.write_row(&MetricsRow {
                step,
                strategy: "pretrain".into(),
                seed,
                e_dyn: 0.0,
                e_pi: 0.0,
                decision: "none".into(),
                ttc: eval.mean_ttc,
                sr: eval.success_rate,
                wall_ms: 0,
            })?;
        }
    }

    // later snapshots win ties so a flat run still prefers mature actors
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(b.1.cmp(&a.1))
    });
    let mut snapshots: Vec<ParamSet> =
        candidates.into_iter().take(pt.snapshots.max(1)).map(|(_, _, a)| a).collect();
    if snapshots.is_empty() {
        snapshots.push(actor.effective_actor());
    }
    if let Some((_, best_params, best_critic)) = best {
        params = best_params;
        critic = best_critic;
    }
    let mut ensemble =
        PolicyEnsemble::from_subunits(x_dim, cfg.model.actor_hidden, n_actions, snapshots)
            .map_err(HarnessError::Agent)?;
    // Snapshots from distant training steps are parameter-distant, and a
    // uniform convex combination of them can behave like none of them. Bias
    // the initial simplex toward the top-scoring sub-unit; the rest stay
    // reachable for weights-only finetuning.
    let mut logits = vec![0.0; ensemble.d];
    logits[0] = 2.6;
    ensemble
        .params
        .set_value("ens.logits", Tensor::vector(logits))
        .expect("logits length matches the ensemble");
    let lora = RssmLora::new(params, cfg.model.lora_rank, seed ^ 0x6261_7369)
        .map_err(HarnessError::Wm)?;
    let state = AdaptState::new(rssm, lora, ensemble, critic, ReplayBuffer::DEFAULT_CAPACITY);

    let path = pretrain_checkpoint_path(cfg, seed);
    Checkpoint::from_adapt_state(&state, 0, seed, cfg.digest()).save(&path)?;
    Ok(path)
}

/// Finetune on the shifted task from the seed's pretraining checkpoint,
/// appending one metrics row per step with flush-per-row durability. A
/// resume checkpoint is written at every evaluation boundary; if one exists
/// the run continues from its step with no duplicate indices. Returns the
/// CSV path.
pub fn run_finetune(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let task = cfg.resolve_task(&cfg.finetune_task)?;
    let weights = cfg.reward;
    let strategy = cfg.strategy();
    let csv_path = finetune_csv_path(cfg, seed);
    let resume_path = resume_checkpoint_path(cfg, seed);

    let (mut state, start_step, mut csv) = if resume_path.exists() {
        let ck = Checkpoint::load(&resume_path)?;
        let state = ck.to_adapt_state(cfg)?;
        (state, ck.step as usize, MetricsWriter::append(&csv_path)?)
    } else {
        let ck = Checkpoint::load(&pretrain_checkpoint_path(cfg, seed))?;
        (ck.to_adapt_state(cfg)?, 0, MetricsWriter::create(&csv_path)?)
    };

    let mut opts = FinetuneOpts::new(&cfg.ac);
    let chunk = cfg.eval_every.max(1);
    let mut at = start_step;
    while at < cfg.finetune_steps {
        let until = (at + chunk).min(cfg.finetune_steps);
        run_strategy_from(
            strategy,
            &mut state,
            &task,
            &weights,
            &cfg.adapt,
            &cfg.ac,
            &mut opts,
            at,
            until,
            cfg.eval_every,
            cfg.eval_episodes,
            seed,
            &mut |row| {
                csv.write_row(&MetricsRow {
                    step: row.step,
                    strategy: strategy.to_string(),
                    seed,
                    e_dyn: row.e_dyn,
                    e_pi: row.e_pi,
                    decision: MetricsRow::decision_label(row.decision, row.updated).into(),
                    ttc: row.ttc,
                    sr: row.sr,
                    wall_ms: 0,
                })
                .map_err(|e| AdaptError::Callback(e.to_string()))
            },
        )
        .map_err(HarnessError::Adapt)?;
        Checkpoint::from_adapt_state(&state, until as u64, seed, cfg.digest())
            .save(&resume_path)?;
        at = until;
    }
    Ok(csv_path)
}

/// Evaluate a checkpoint's agent on a task.
pub fn run_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    task_id: &str,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult, HarnessError> {
    let task = cfg.resolve_task(task_id)?;
    let state = Checkpoint::load(checkpoint)?.to_adapt_state(cfg)?;
    evaluate_agent(&state, &task, &cfg.reward, episodes, seed).map_err(HarnessError::Adapt)
}

/// Finite-difference check of one differentiable operation under one seed.
fn gradcheck_case(op: &str, seed: u64) -> Result<f64, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut basis_store: Option<(Tensor, Arc<Vec<Tensor>>)> = None;
    match op {
        "linear" => {
            params.insert("w", glorot_tensor(&mut rng, 3, 4), true)?;
            params.insert("b", randn_tensor(&mut rng, &[3], 0.5), true)?;
            params.insert("x", randn_tensor(&mut rng, &[4], 1.0), true)?;
        }
        "mul_add_sub" | "scale_shift" | "relu" | "tanh" | "sigmoid" | "softplus" | "max_const"
        | "mean_all" => {
            params.insert("x", randn_tensor(&mut rng, &[6], 1.0), true)?;
            params.insert("y", randn_tensor(&mut rng, &[6], 1.0), true)?;
        }
        "group_softmax" | "group_log_softmax" => {
            params.insert("x", randn_tensor(&mut rng, &[6], 1.0), true)?;
        }
        "cat_sum_cols" | "pick_per_row" => {
            params.insert("x", randn_tensor(&mut rng, &[2, 3], 1.0), true)?;
            params.insert("y", randn_tensor(&mut rng, &[2, 2], 1.0), true)?;
        }
        "convex_comb" => {
            params.insert("logits", randn_tensor(&mut rng, &[3], 1.0), true)?;
            for i in 0..3 {
                params.insert(&format!("item{i}"), randn_tensor(&mut rng, &[4], 1.0), true)?;
            }
        }
        "lin_comb" => {
            params.insert("c", randn_tensor(&mut rng, &[4], 1.0), true)?;
            let base = randn_tensor(&mut rng, &[3, 2], 1.0);
            let basis: Vec<Tensor> = (0..4).map(|_| randn_tensor(&mut rng, &[3, 2], 0.5)).collect();
            basis_store = Some((base, Arc::new(basis)));
        }
        "theory_cell" => {
            params.insert("x", randn_tensor(&mut rng, &[3], 1.0), true)?;
            params.insert("a", randn_tensor(&mut rng, &[2], 1.0), true)?;
        }
        other => return Err(HarnessError::Config(format!("unknown gradcheck op {other:?}"))),
    }
    let cell = {
        let mut p = crate::numkernel::TheoryCellParams::zeros(3, 2, 3, 3);
        p.a_mat = randn_tensor(&mut rng, &[3, 3], 0.5);
        p.w = randn_tensor(&mut rng, &[3, 3], 0.5);
        p.u = randn_tensor(&mut rng, &[3, 2], 0.5);
        p.v = randn_tensor(&mut rng, &[3, 3], 0.5);
        p.bias = randn_tensor(&mut rng, &[3], 0.5);
        p
    };

    let op_name = op.to_string();
    let build = move |g: &mut Graph| -> Result<NodeRef, crate::numkernel::KernelError> {
        let loss = match op_name.as_str() {
            "linear" => {
                let y = g.linear(g.p("x"), g.p("w"), Some(g.p("b")))?;
                let y = g.tanh(y);
                g.sum_all(y)
            }
            "mul_add_sub" => {
                let m = g.mul(g.p("x"), g.p("y"))?;
                let a = g.add(m, g.p("x"))?;
                let s = g.sub(a, g.p("y"))?;
                g.sum_all(s)
            }
            "scale_shift" => {
                let s = g.scale(g.p("x"), 2.5);
                let s = g.add_const(s, -0.75);
                let m = g.mul(s, g.p("y"))?;
                g.sum_all(m)
            }
            "relu" => {
                let r = g.relu(g.p("x"));
                let m = g.mul(r, g.p("y"))?;
                g.sum_all(m)
            }
            "tanh" => {
                let t = g.tanh(g.p("x"));
                let m = g.mul(t, g.p("y"))?;
                g.sum_all(m)
            }
            "sigmoid" => {
                let s = g.sigmoid(g.p("x"));
                let m = g.mul(s, g.p("y"))?;
                g.sum_all(m)
            }
            "softplus" => {
                let s = g.softplus(g.p("x"));
                let m = g.mul(s, g.p("y"))?;
                g.sum_all(m)
            }
            "max_const" => {
                let m = g.max_const(g.p("x"), 0.1);
                let m = g.mul(m, g.p("y"))?;
                g.sum_all(m)
            }
            "mean_all" => {
                let m = g.mul(g.p("x"), g.p("y"))?;
                g.mean_all(m)
            }
            "group_softmax" => {
                let s = g.group_softmax(g.p("x"), 3)?;
                let sq = g.mul(s, s)?;
                g.sum_all(sq)
            }
            "group_log_softmax" => {
                let ls = g.group_log_softmax(g.p("x"), 3)?;
                let s = g.group_softmax(g.p("x"), 3)?;
                let prod = g.mul(s, ls)?;
                g.sum_all(prod)
            }
            "cat_sum_cols" => {
                let cat = g.cat_cols(&[g.p("x"), g.p("y")])?;
                let t = g.tanh(cat);
                let s = g.sum_cols(t);
                let sq = g.mul(s, s)?;
                g.sum_all(sq)
            }
            "pick_per_row" => {
                let sm = g.group_softmax(g.p("x"), 3)?;
                let picked = g.pick_per_row(sm, &[2, 0])?;
                let cat = g.cat_cols(&[g.p("y")])?;
                let s = g.sum_cols(cat);
                let m = g.mul(picked, s)?;
                g.sum_all(m)
            }
            "convex_comb" => {
                let w = g.group_softmax(g.p("logits"), 3)?;
                let items = [g.p("item0"), g.p("item1"), g.p("item2")];
                let c = g.convex_comb(w, &items)?;
                let t = g.tanh(c);
                g.sum_all(t)
            }
            "lin_comb" => {
                let (base, basis) = basis_store.clone().expect("set for lin_comb");
                let lc = g.lin_comb(g.p("c"), base, basis)?;
                let t = g.tanh(lc);
                g.sum_all(t)
            }
            "theory_cell" => {
                let (h, z) = crate::numkernel::theory_rnn_step_graph(g, g.p("x"), g.p("a"), &cell)?;
                let s = g.add(h, z)?;
                let sq = g.mul(s, s)?;
                g.sum_all(sq)
            }
            other => unreachable!("op list is fixed: {other}"),
        };
        Ok(loss)
    };
    Ok(finite_diff_check(build, &params, 1e-5)?)
}

/// All gradient-checked operations.
pub const GRADCHECK_OPS: [&str; 16] = [
    "linear",
    "mul_add_sub",
    "scale_shift",
    "relu",
    "tanh",
    "sigmoid",
    "softplus",
    "max_const",
    "mean_all",
    "group_softmax",
    "group_log_softmax",
    "cat_sum_cols",
    "pick_per_row",
    "convex_comb",
    "lin_comb",
    "theory_cell",
];

/// Finite-difference sweep over every differentiable operation: the maximum
/// relative error per op across `n_seeds` randomized instances.
pub fn gradcheck_suite(n_seeds: u64) -> Result<Vec<(String, f64)>, HarnessError> {
    let mut out = Vec::with_capacity(GRADCHECK_OPS.len());
    for op in GRADCHECK_OPS {
        let mut worst = 0.0f64;
        for seed in 0..n_seeds {
            worst = worst.max(gradcheck_case(op, 0x6763_0000 + seed)?);
        }
        out.push((op.to_string(), worst));
    }
    Ok(out)
}
