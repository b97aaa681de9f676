use std::time::Instant;

use adawm::drivesim::{evaluate_policy, route_follower_action, ttc, TaskConfig};
use adawm::harness::*;

const SHORT_RIGHT: &str = r#"
name = "short-right-turn"
town = "grid-town"
weather = "clear"
route = 0
lane_start_point = [-8.0, -2.0, 0.0]
ego_path = [
  [-8.0, -2.0], [-6.0, -2.0], [-2.0, -2.5], [0.5, -4.0],
  [1.8, -7.0], [2.0, -10.0], [2.0, -12.0],
]
traffic_density = "moderate"
step_limit = 100
"#;

const SHORT_LEFT: &str = r#"
name = "short-left-turn"
town = "grid-town"
weather = "clear"
route = 0
lane_start_point = [-8.0, -2.0, 0.0]
ego_path = [
  [-8.0, -2.0], [-6.0, -2.0], [-3.0, -1.5], [-2.2, 0.5],
  [-2.0, 4.0], [-2.0, 7.0], [-2.0, 10.0],
]
traffic_density = "moderate"
step_limit = 100
"#;

fn follower_baseline(task: &TaskConfig, speed: f64, yield_ttc: f64) {
    let weights = Default::default();
    let res = evaluate_policy(
        |_obs, sim| {
            let mut a = route_follower_action(sim, speed);
            if yield_ttc > 0.0 && ttc(sim.ego(), &sim.traffic_states()) < yield_ttc {
                a = route_follower_action(sim, 0.0);
            }
            a
        },
        task,
        &weights,
        40,
        123,
    )
    .unwrap();
    println!(
        "{} follower speed {speed} yield {yield_ttc}: sr {:.2} ttc {:.2}",
        task.id, res.success_rate, res.mean_ttc
    );
}

fn diagnose(task: &TaskConfig, speed: f64, yield_ttc: f64) {
    use adawm::drivesim::DriveSim;
    let mut causes = std::collections::BTreeMap::new();
    for e in 0..20u64 {
        let mut sim = DriveSim::new(task.clone(), Default::default()).unwrap();
        sim.reset(123 + e);
        loop {
            let mut a = route_follower_action(&sim, speed);
            if yield_ttc > 0.0 && ttc(sim.ego(), &sim.traffic_states()) < yield_ttc {
                a = route_follower_action(&sim, 0.0);
            }
            let res = sim.step(a).unwrap();
            if res.terminated {
                let ego = sim.ego();
                if e < 6 {
                    println!(
                        "  ep{e}: {:?} at ({:.1},{:.1}) v={:.1} steps={}",
                        res.cause.unwrap(),
                        ego.pos.x,
                        ego.pos.y,
                        ego.speed,
                        sim.steps()
                    );
                }
                *causes.entry(format!("{:?}", res.cause.unwrap())).or_insert(0) += 1;
                break;
            }
        }
    }
    println!("{} speed {speed} yield {yield_ttc}: {causes:?}", task.id);
}

// Predictive expert: follow the route, but brake if any scripted vehicle's
// straight-line forecast comes close to the ego's along-route forecast.
fn predictive_action(sim: &adawm::drivesim::DriveSim, speed: f64) -> usize {
    use adawm::drivesim::{traffic_lanes, ttc};
    let ego = sim.ego();
    // never stop inside a traffic lane's swept zone: commit and clear it
    let in_zone = traffic_lanes(sim.task().maneuver)
        .iter()
        .any(|lane| lane.closest(ego.pos).0 < 3.5);
    if in_zone {
        // still brake for same-lane threats right ahead
        let t = ttc(ego, &sim.traffic_states());
        return route_follower_action(sim, if t < 2.0 { 0.0 } else { speed });
    }
    let (_, _, s0) = sim.route().closest_full(ego.pos);
    let mut danger = false;
    for other in sim.traffic_states() {
        for k in 1..=40 {
            let t = 0.1 * k as f64;
            let ep = sim.route().point_at(s0 + speed * t, false);
            let op = other.pos.add(other.velocity().scale(t));
            if ep.dist(op) < 3.4 {
                danger = true;
                break;
            }
        }
        if danger {
            break;
        }
    }
    route_follower_action(sim, if danger { 0.0 } else { speed })
}

fn expert_eval(task: &TaskConfig, speed: f64) {
    let res = evaluate_policy(
        |_obs, sim| predictive_action(sim, speed),
        task,
        &Default::default(),
        40,
        123,
    )
    .unwrap();
    println!("{} expert speed {speed}: sr {:.2} ttc {:.2}", task.id, res.success_rate, res.mean_ttc);
}

fn main() {
    std::fs::write("/tmp/short-right-turn.toml", SHORT_RIGHT).unwrap();
    std::fs::write("/tmp/short-left-turn.toml", SHORT_LEFT).unwrap();
    let prefix = std::env::var("PT_TASKS").unwrap_or_else(|_| "short".to_string());
    let left_prefix = std::env::var("PT_LEFT_TASKS").unwrap_or_else(|_| prefix.clone());
    let right_path = format!("/tmp/{prefix}-right-turn.toml");
    let left_path = format!("/tmp/{left_prefix}-left-turn.toml");
    let right0 =
        TaskConfig::from_toml_str(&std::fs::read_to_string(&right_path).unwrap()).unwrap();
    let left0 = TaskConfig::from_toml_str(&std::fs::read_to_string(&left_path).unwrap()).unwrap();
    if std::env::var("DIAG_ONLY").is_ok() {
        diagnose(&right0, 3.5, 0.0);
        diagnose(&left0, 3.5, 0.0);
    }
    for task in [&right0, &left0] {
        let res = evaluate_policy(
            |_obs, sim| adawm::drivesim::yielding_follower_action(sim, 3.5),
            task,
            &Default::default(),
            40,
            123,
        )
        .unwrap();
        println!("{} yielding follower: sr {:.2} ttc {:.2}", task.id, res.success_rate, res.mean_ttc);
    }
    expert_eval(&right0, 3.5);
    expert_eval(&left0, 3.5);
    if std::env::var("DIAG_ONLY").is_ok() {
        return;
    }
    let right = TaskConfig::from_toml_str(SHORT_RIGHT).unwrap();
    let left = TaskConfig::from_toml_str(SHORT_LEFT).unwrap();
    for task in [&right, &left] {
        follower_baseline(task, 3.0, 0.0);
        follower_baseline(task, 3.5, 0.0);
        follower_baseline(task, 3.5, 3.0);
    }

    let env = |k: &str, d: &str| std::env::var(k).unwrap_or_else(|_| d.to_string());
    let steps = env("PT_STEPS", "600");
    let alr = env("PT_ALR", "1e-3");
    let clr = env("PT_CLR", "1e-3");
    let wlr = env("PT_WLR", "1e-3");
    let eta = env("PT_ETA", "3e-4");
    let horizon = env("PT_HOR", "12");
    let gamma = env("PT_GAMMA", "0.997");
    let assist_end = env("PT_AEND", "0.05");
    let aciters = env("PT_ACIT", "2");
    let seed: u64 = env("PT_SEED", "0").parse().unwrap();
    let w_saf = env("PT_WSAF", "1.5");
    let w_time = env("PT_WTIME", "1.7");
    let w_ori = env("PT_WORI", "0.8");
    let w_tgt = env("PT_WTGT", "0.6");
    let latents = env("PT_LAT", "4");
    let classes = env("PT_CLS", "4");
    let h_dim = env("PT_HDIM", "12");
    let hidden = env("PT_HID", "16");
    let ahid = env("PT_AHID", "16");
    let rank = env("PT_RANK", "8");
    let dir = format!("/tmp/adawm-pt-{}", env("PT_TAG", "x"));
    let cfg = ExperimentConfig::from_toml_str(&format!(
        r#"
        pretrain_task = "{right_path}"
        finetune_task = "{left_path}"
        strategy = "model-only"
        seeds = [{seed}]
        pretrain_steps = {steps}
        finetune_steps = 0
        eval_episodes = 20
        eval_every = 50
        out_dir = "{dir}"
        [model]
        latents = {latents}
        classes = {classes}
        h_dim = {h_dim}
        hidden = {hidden}
        lora_rank = {rank}
        actor_hidden = {ahid}
        critic_hidden = {ahid}
        [reward]
        safety = {w_saf}
        comfort = 0.05
        time = {w_time}
        velocity = 0.3
        orientation = {w_ori}
        target = {w_tgt}
        [ac]
        gamma = {gamma}
        lambda = 0.95
        horizon = {horizon}
        eta = {eta}
        ema_decay = 0.98
        actor_lr = {alr}
        critic_lr = {clr}
        adam_eps = 1e-5
        grad_clip = 100.0
        [pretrain]
        assist_start = 0.9
        assist_end = {assist_end}
        assist_speed = 3.5
        wm_iters = 2
        ac_iters = {aciters}
        batch_seqs = 4
        seq_len = 8
        wm_lr = {wlr}
        snapshots = 4
    "#
    ))
    .unwrap();
    let ck_path = format!("{dir}/pretrain-seed{seed}.ck");
    let skip_pt = std::path::Path::new(&ck_path).exists() && std::env::var("PT_REUSE").is_ok();
    if !skip_pt {
        let _ = std::fs::remove_dir_all(&dir);
    }
    let t0 = Instant::now();
    if !skip_pt {
        run_pretrain(&cfg, seed).unwrap();
    }
    println!("pretrain {steps} steps: {:.1?}", t0.elapsed());
    for r in read_metrics(std::path::Path::new(&format!("{dir}/pretrain-seed{seed}.csv"))).unwrap()
    {
        println!("step {:>4} sr {:.2} ttc {:.2}", r.step, r.sr, r.ttc);
    }

    if std::env::var("PT_LORA_PROBE").is_ok() {
        use adawm::worldmodel::model_finetune_step;
        use adawm::numkernel::Adam;
        use rand::SeedableRng;
        let ck = Checkpoint::load(std::path::Path::new(&format!(
            "{dir}/pretrain-seed{seed}.ck"
        )))
        .unwrap();
        let mut state = ck.to_adapt_state(&cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        // fill the new-task buffer with left-task experience
        for e in 0..30u64 {
            adawm::adapt::collect_episode(&mut state, &left0, &cfg.reward, 5000 + e, 0.0, 0.0)
                .unwrap();
        }
        let lr: f64 = env("PT_LORA_LR", "1e-3").parse().unwrap();
        let mut opt = Adam::new(lr, 1e-5, Some(100.0));
        for it in 0..400 {
            let batch = state.w.sample_sequences(4, 8, &mut rng).unwrap();
            let v = model_finetune_step(&state.rssm, &mut state.lora, &mut opt, &batch, &mut rng)
                .unwrap();
            if it % 40 == 0 || it == 399 {
                let norm: f64 = state
                    .lora
                    .coeffs
                    .names()
                    .map(|n| {
                        let t = state.lora.coeffs.value(n).unwrap();
                        t.data().iter().map(|x| x * x).sum::<f64>()
                    })
                    .sum::<f64>()
                    .sqrt();
                println!(
                    "it {it:>3} total {:.4} pred {:.4} dyn {:.4} rep {:.4} |c| {norm:.3}",
                    v.total, v.pred, v.dyn_kl, v.rep_kl
                );
            }
        }
        return;
    }

    if let Ok(fts) = std::env::var("PT_FT") {
        let ft_steps = env("PT_FTSTEPS", "50");
        let c = env("PT_C", "5.0");
        for strat in fts.split(',') {
            for f in std::fs::read_dir(&dir).unwrap() {
                let f = f.unwrap().path();
                let name = f.file_name().unwrap().to_string_lossy().to_string();
                if name.starts_with(&format!("ft-{strat}-")) {
                    std::fs::remove_file(&f).unwrap();
                }
            }
            let mut fcfg = cfg.clone();
            fcfg.strategy = strat.to_string();
            fcfg.finetune_steps = ft_steps.parse().unwrap();
            fcfg.adapt.c = c.parse().unwrap();
            let t1 = Instant::now();
            run_finetune(&fcfg, seed).unwrap();
            let rows =
                read_metrics(std::path::Path::new(&format!("{dir}/ft-{strat}-seed{seed}.csv")))
                    .unwrap();
            let srs: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.sr)).collect();
            let dec: Vec<&str> = rows.iter().map(|r| r.decision.as_str()).collect();
            println!("[ft {strat} seed {seed}] {:.1?} sr: {}", t1.elapsed(), srs.join(" "));
            println!("[ft {strat} seed {seed}] dec: {}", dec.join(" "));
            // roll the finetuned agent on the left task and show behavior
            use adawm::drivesim::DriveSim;
            use rand::SeedableRng;
            let ck = Checkpoint::load(std::path::Path::new(&format!(
                "{dir}/ft-{strat}-seed{seed}.ck"
            )))
            .unwrap();
            let mut fdiag = fcfg.clone();
            fdiag.finetune_steps = 0;
            let state = ck.to_adapt_state(&fdiag).unwrap();
            let params = state.lora.effective().unwrap();
            let mut causes = std::collections::BTreeMap::new();
            for e in 0..12u64 {
                let mut sim = DriveSim::new(left0.clone(), cfg.reward.clone()).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(900 + e);
                let mut obs = sim.reset(900 + e).to_vec();
                let mut ms = state.rssm.observe_first(&params, &obs, &mut rng).unwrap();
                loop {
                    let a = state.ensemble.act(&ms.x(), &mut rng).unwrap().0;
                    let res = sim.step(a).unwrap();
                    if res.terminated {
                        let ego = sim.ego();
                        if e < 5 {
                            println!(
                                "    ep{e}: {:?} at ({:.1},{:.1}) v={:.1} steps={}",
                                res.cause.unwrap(),
                                ego.pos.x,
                                ego.pos.y,
                                ego.speed,
                                sim.steps()
                            );
                        }
                        *causes
                            .entry(format!("{:?}", res.cause.unwrap()))
                            .or_insert(0) += 1;
                        break;
                    }
                    obs = res.observation.to_vec();
                    ms = state.rssm.advance(&params, &ms, a, &obs, &mut rng).unwrap().0;
                }
            }
            println!("[ft {strat} seed {seed}] causes: {causes:?}");
        }
        return;
    }

    // roll the final agent and show what it actually does
    let diag_task = if std::env::var("PT_DIAG_LEFT").is_ok() { &left0 } else { &right0 };
    use adawm::drivesim::DriveSim;
    use rand::SeedableRng;
    let ck =
        Checkpoint::load(std::path::Path::new(&format!("{dir}/pretrain-seed{seed}.ck"))).unwrap();
    let state = ck.to_adapt_state(&cfg).unwrap();
    let params = state.lora.effective().unwrap();
    let mut causes = std::collections::BTreeMap::new();
    for e in 0..20u64 {
        let mut sim = DriveSim::new(diag_task.clone(), cfg.reward.clone()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(900 + e);
        let mut obs = sim.reset(900 + e).to_vec();
        let mut ms = state.rssm.observe_first(&params, &obs, &mut rng).unwrap();
        loop {
            let a = state.ensemble.act(&ms.x(), &mut rng).unwrap().0;
            let res = sim.step(a).unwrap();
            if res.terminated {
                let ego = sim.ego();
                if e < 8 {
                    println!(
                        "  ep{e}: {:?} at ({:.1},{:.1}) v={:.1} steps={}",
                        res.cause.unwrap(),
                        ego.pos.x,
                        ego.pos.y,
                        ego.speed,
                        sim.steps()
                    );
                }
                *causes.entry(format!("{:?}", res.cause.unwrap())).or_insert(0) += 1;
                break;
            }
            obs = res.observation.to_vec();
            ms = state.rssm.advance(&params, &ms, a, &obs, &mut rng).unwrap().0;
        }
    }
    println!("final agent causes: {causes:?}");
}
