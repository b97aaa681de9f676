//! Exact evaluation of the theoretical results behind the adaptive
//! finetuning scheme: the multi-step prediction-error bound, the planning
//! performance-gap bound, the update-selection rule, and a tabular-MDP
//! oracle that checks all of them against ground truth.

pub mod bounds;
pub mod constants;
pub mod tabular;

pub use bounds::{
    amplification, bound_report, c1_c2, decision_equivalence_check, gamma_cap,
    initial_amplification, lemma1_prediction_bound, prediction_error_max, psi, theorem1_gap_bound,
    threshold_choice, weight_product_bound, BoundReport, EquivalenceOutcome, UpdateChoice,
};
pub use constants::AssumptionConstants;
pub use tabular::{
    exact_gap, exact_q, exact_tv_profile, exact_value, optimal_policy, policy_tv_max, tv_distance,
    TabularMdp, TvProfile,
};

use thiserror::Error;

/// Everything that can go wrong while evaluating the theory module.
#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("discount factor must lie in (0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("confidence delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),
    #[error("sample count must be at least 1, got {0}")]
    InvalidSampleCount(f64),
    #[error("assumption constants must be finite and nonnegative")]
    NegativeConstant,
    #[error("mismatch input {name} must be finite and nonnegative, got {value}")]
    InvalidMismatch { name: &'static str, value: f64 },
    #[error("gamma_cap degenerated to {0}; the selection threshold is undefined")]
    DegenerateGammaCap(f64),
    #[error("MDP must have at least one state and one action")]
    EmptyMdp,
    #[error(
        "table sizes do not match {n_states} states x {n_actions} actions \
         (transition {transition}, reward {reward}, rho0 {rho0})"
    )]
    TableShape {
        n_states: usize,
        n_actions: usize,
        transition: usize,
        reward: usize,
        rho0: usize,
    },
    #[error("{what} row {index} is not a probability distribution (sum {sum})")]
    NonStochasticRow { what: &'static str, index: usize, sum: f64 },
    #[error("policy table must have {expected} entries, got {got}")]
    PolicyShape { expected: usize, got: usize },
    #[error("MDPs have incompatible shapes {a:?} vs {b:?}")]
    IncompatibleMdps { a: (usize, usize), b: (usize, usize) },
    #[error("value iteration failed to converge within {iters} sweeps")]
    NoConvergence { iters: usize },
}

/// Instantiate the bound constants exactly from a finite MDP and policy,
/// using the discrete metric on states and actions: the reward Lipschitz
/// constant is the exact reward spread and the policy Lipschitz constant is
/// the exact largest pairwise policy total variation.
pub fn instance_constants(
    mdp: &TabularMdp,
    policy: &[f64],
    horizon: usize,
) -> Result<AssumptionConstants, TheoryError> {
    if policy.len() != mdp.n_states * mdp.n_actions {
        return Err(TheoryError::PolicyShape {
            expected: mdp.n_states * mdp.n_actions,
            got: policy.len(),
        });
    }
    let r_min = mdp.reward.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_max_entry = mdp.reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let l_r = r_max_entry - r_min;
    let na = mdp.n_actions;
    let mut l_pi = 0.0_f64;
    for s in 0..mdp.n_states {
        for t in s + 1..mdp.n_states {
            l_pi = l_pi.max(tv_distance(
                &policy[s * na..(s + 1) * na],
                &policy[t * na..(t + 1) * na],
            ));
        }
    }
    Ok(AssumptionConstants {
        gamma: mdp.gamma,
        horizon,
        r_max: mdp.r_max(),
        l_r,
        l_pi,
        ..AssumptionConstants::default()
    })
}

/// Outcome of one random bound-dominance trial.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DominanceTrial {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub exact_gap: f64,
    pub bound_total: f64,
    pub e_phat: f64,
    pub e_pi: f64,
    pub pass: bool,
}

/// Summary of a batch of dominance trials.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DominanceSummary {
    pub instances: usize,
    pub passes: usize,
    pub worst_ratio: f64,
}

fn sample_distribution(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand::Rng;
    // exponential draws normalized: a flat Dirichlet sample
    let raw: Vec<f64> = (0..n).map(|_| -f64::ln(rng.gen_range(1e-12..1.0))).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Draw a random true/model MDP pair plus a behavior policy and check that
/// the gap bound, instantiated exactly from the finite instance, dominates
/// the exact start-weighted value gap.
///
/// Instantiation: `r_max = max|r|`, `l_r` = exact reward spread, `l_pi` =
/// exact largest pairwise policy total variation (the Lipschitz constants
/// under the discrete metric), `e_phat` = exact mean transition total
/// variation, `e_pi` = exact policy total variation against the optimal
/// policy, and `e_max = 0` since the planner is given oracle dynamics.
pub fn dominance_trial(rng: &mut rand_chacha::ChaCha8Rng) -> Result<DominanceTrial, TheoryError> {
    use rand::Rng;
    let ns = rng.gen_range(2..=6);
    let na = rng.gen_range(1..=3);
    let gamma = rng.gen_range(0.3..0.9);
    let horizon = rng.gen_range(2..=6);
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        transition.extend(sample_distribution(rng, ns));
    }
    let reward: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rho0 = sample_distribution(rng, ns);
    let mdp = TabularMdp::new(ns, na, transition, reward, gamma, rho0)?;

    // model = truth with every row moved toward uniform by a step scaled so
    // all rows shift by exactly the same total variation (the bound consumes
    // the mean row TV, so a homogeneous shift keeps the test sharp without
    // hiding a worst-case row behind the average)
    let uniform = 1.0 / ns as f64;
    let mut row_tv = Vec::with_capacity(ns * na);
    let mut cap = f64::INFINITY;
    for sa in 0..ns * na {
        let row = &mdp.transition[sa * ns..(sa + 1) * ns];
        let tv: f64 = 0.5 * row.iter().map(|p| (p - uniform).abs()).sum::<f64>();
        cap = cap.min(tv);
        row_tv.push(tv);
    }
    let eps = rng.gen_range(0.0..1.0) * cap;
    let mut model = mdp.clone();
    if eps > 0.0 {
        for sa in 0..ns * na {
            let t = eps / row_tv[sa];
            for sp in 0..ns {
                let p = &mut model.transition[sa * ns + sp];
                *p += t * (uniform - *p);
            }
        }
    }

    let mut policy = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        policy.extend(sample_distribution(rng, na));
    }

    let profile = exact_tv_profile(&mdp, &model, &policy)?;
    let pi_star = optimal_policy(&mdp)?;
    let e_pi = policy_tv_max(ns, na, &policy, &pi_star);
    let c = instance_constants(&mdp, &policy, horizon)?;
    let report = theorem1_gap_bound(0.0, profile.mean_transition_tv, e_pi, &c)?;
    let gap = exact_gap(&mdp, &model, &policy)?;
    Ok(DominanceTrial {
        n_states: ns,
        n_actions: na,
        gamma,
        exact_gap: gap,
        bound_total: report.total_bound,
        e_phat: profile.mean_transition_tv,
        e_pi,
        pass: gap.abs() <= report.total_bound,
    })
}

/// Run `instances` independent dominance trials from `seed`.
pub fn dominance_suite(instances: usize, seed: u64) -> Result<DominanceSummary, TheoryError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut passes = 0;
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let t = dominance_trial(&mut rng)?;
        if t.pass {
            passes += 1;
        }
        if t.bound_total > 0.0 {
            worst = worst.max(t.exact_gap.abs() / t.bound_total);
        }
    }
    Ok(DominanceSummary { instances, passes, worst_ratio: worst })
}
