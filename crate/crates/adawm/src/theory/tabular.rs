//! Small tabular MDPs with exact policy evaluation, used to check the gap
//! bound and the mismatch estimators against ground truth.

use serde::{Deserialize, Serialize};

use super::TheoryError;

/// A finite MDP with dense transition and reward tables.
///
/// `transition` is row-major `[s][a][s']`, `reward` is `[s][a]`, and `rho0`
/// is the start-state distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub rho0: Vec<f64>,
}

const ROW_TOL: f64 = 1e-9;

/// Exact total-variation distance between two finite distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn check_distribution(row: &[f64], what: &'static str, index: usize) -> Result<(), TheoryError> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !p.is_finite() || *p < -ROW_TOL) || (sum - 1.0).abs() > ROW_TOL {
        return Err(TheoryError::NonStochasticRow { what, index, sum });
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        rho0: Vec<f64>,
    ) -> Result<Self, TheoryError> {
        if n_states == 0 || n_actions == 0 {
            return Err(TheoryError::EmptyMdp);
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(TheoryError::InvalidGamma(gamma));
        }
        if transition.len() != n_states * n_actions * n_states
            || reward.len() != n_states * n_actions
            || rho0.len() != n_states
        {
            return Err(TheoryError::TableShape {
                n_states,
                n_actions,
                transition: transition.len(),
                reward: reward.len(),
                rho0: rho0.len(),
            });
        }
        let mdp = Self { n_states, n_actions, transition, reward, gamma, rho0 };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(mdp.row(s, a), "transition", s * n_actions + a)?;
            }
        }
        check_distribution(&mdp.rho0, "rho0", 0)?;
        Ok(mdp)
    }

    /// Transition distribution over next states for `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// Largest absolute reward in the table.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }
}

fn check_policy(mdp: &TabularMdp, policy: &[f64]) -> Result<(), TheoryError> {
    if policy.len() != mdp.n_states * mdp.n_actions {
        return Err(TheoryError::PolicyShape {
            expected: mdp.n_states * mdp.n_actions,
            got: policy.len(),
        });
    }
    for s in 0..mdp.n_states {
        check_distribution(&policy[s * mdp.n_actions..(s + 1) * mdp.n_actions], "policy", s)?;
    }
    Ok(())
}

/// Exact state values of `policy` on `mdp`, by iterating the Bellman
/// evaluation operator until the sup-norm update falls below `1e-13`
/// (the operator is a `gamma`-contraction, so the fixed-point residual is
/// below `1e-12` for any `gamma` bounded away from 1).
pub fn exact_value(mdp: &TabularMdp, policy: &[f64]) -> Result<Vec<f64>, TheoryError> {
    check_policy(mdp, policy)?;
    let ns = mdp.n_states;
    let na = mdp.n_actions;
    // collapse to the policy-induced chain once
    let mut r_pi = vec![0.0; ns];
    let mut p_pi = vec![0.0; ns * ns];
    for s in 0..ns {
        for a in 0..na {
            let w = policy[s * na + a];
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * mdp.reward[s * na + a];
            for (sp, p) in mdp.row(s, a).iter().enumerate() {
                p_pi[s * ns + sp] += w * p;
            }
        }
    }
    let mut v = vec![0.0; ns];
    let max_iters = 2_000_000;
    for _ in 0..max_iters {
        let mut delta = 0.0_f64;
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let mut acc = r_pi[s];
            for sp in 0..ns {
                acc += mdp.gamma * p_pi[s * ns + sp] * v[sp];
            }
            delta = delta.max((acc - v[s]).abs());
            next[s] = acc;
        }
        v = next;
        if delta <= 1e-13 {
            return Ok(v);
        }
    }
    Err(TheoryError::NoConvergence { iters: max_iters })
}

/// Exact action values of `policy` on `mdp`.
pub fn exact_q(mdp: &TabularMdp, policy: &[f64]) -> Result<Vec<f64>, TheoryError> {
    let v = exact_value(mdp, policy)?;
    let mut q = vec![0.0; mdp.n_states * mdp.n_actions];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mut acc = mdp.reward[s * mdp.n_actions + a];
            for (sp, p) in mdp.row(s, a).iter().enumerate() {
                acc += mdp.gamma * p * v[sp];
            }
            q[s * mdp.n_actions + a] = acc;
        }
    }
    Ok(q)
}

/// Exact optimal (greedy) deterministic policy of `mdp`, as one-hot rows.
/// Ties break toward the lowest action index.
pub fn optimal_policy(mdp: &TabularMdp) -> Result<Vec<f64>, TheoryError> {
    let ns = mdp.n_states;
    let na = mdp.n_actions;
    let mut v = vec![0.0; ns];
    let max_iters = 2_000_000;
    let mut converged = false;
    for _ in 0..max_iters {
        let mut delta = 0.0_f64;
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let mut acc = mdp.reward[s * na + a];
                for (sp, p) in mdp.row(s, a).iter().enumerate() {
                    acc += mdp.gamma * p * v[sp];
                }
                best = best.max(acc);
            }
            delta = delta.max((best - v[s]).abs());
            next[s] = best;
        }
        v = next;
        if delta <= 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TheoryError::NoConvergence { iters: max_iters });
    }
    let mut policy = vec![0.0; ns * na];
    for s in 0..ns {
        let mut best_a = 0;
        let mut best = f64::NEG_INFINITY;
        for a in 0..na {
            let mut acc = mdp.reward[s * na + a];
            for (sp, p) in mdp.row(s, a).iter().enumerate() {
                acc += mdp.gamma * p * v[sp];
            }
            if acc > best {
                best = acc;
                best_a = a;
            }
        }
        policy[s * na + best_a] = 1.0;
    }
    Ok(policy)
}

/// Exact start-weighted value gap of running `policy` under `mdp_true`
/// versus under `mdp_model`: `rho0 . (v_true - v_model)`.
pub fn exact_gap(
    mdp_true: &TabularMdp,
    mdp_model: &TabularMdp,
    policy: &[f64],
) -> Result<f64, TheoryError> {
    compatible(mdp_true, mdp_model)?;
    let v_true = exact_value(mdp_true, policy)?;
    let v_model = exact_value(mdp_model, policy)?;
    Ok(mdp_true
        .rho0
        .iter()
        .zip(v_true.iter().zip(&v_model))
        .map(|(w, (a, b))| w * (a - b))
        .sum())
}

fn compatible(a: &TabularMdp, b: &TabularMdp) -> Result<(), TheoryError> {
    let same_shape = a.n_states == b.n_states && a.n_actions == b.n_actions;
    // a model pair shares everything except the transition tables
    let same_tables = same_shape
        && a.reward.iter().zip(&b.reward).all(|(x, y)| (x - y).abs() <= 1e-12)
        && a.rho0.iter().zip(&b.rho0).all(|(x, y)| (x - y).abs() <= 1e-12);
    if !same_tables {
        return Err(TheoryError::IncompatibleMdps {
            a: (a.n_states, a.n_actions),
            b: (b.n_states, b.n_actions),
        });
    }
    Ok(())
}

/// Exact mismatch summary of a model MDP and a policy against the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TvProfile {
    /// `max_{s,a} tv(p_true(.|s,a), p_model(.|s,a))`.
    pub max_transition_tv: f64,
    /// Mean of the same quantity over all `(s, a)` pairs.
    pub mean_transition_tv: f64,
    /// `max_s tv(policy(.|s), greedy(.|s))` where greedy improves `policy`
    /// one step under the true dynamics.
    pub policy_greedy_tv: f64,
}

/// Compute the exact transition and policy mismatch profile.
pub fn exact_tv_profile(
    mdp_true: &TabularMdp,
    mdp_model: &TabularMdp,
    policy: &[f64],
) -> Result<TvProfile, TheoryError> {
    compatible(mdp_true, mdp_model)?;
    check_policy(mdp_true, policy)?;
    let mut max_tv = 0.0_f64;
    let mut sum_tv = 0.0_f64;
    for s in 0..mdp_true.n_states {
        for a in 0..mdp_true.n_actions {
            let tv = tv_distance(mdp_true.row(s, a), mdp_model.row(s, a));
            max_tv = max_tv.max(tv);
            sum_tv += tv;
        }
    }
    let q = exact_q(mdp_true, policy)?;
    let na = mdp_true.n_actions;
    let mut policy_tv = 0.0_f64;
    for s in 0..mdp_true.n_states {
        let row = &q[s * na..(s + 1) * na];
        let mut best_a = 0;
        let mut best = f64::NEG_INFINITY;
        for (a, qv) in row.iter().enumerate() {
            if *qv > best {
                best = *qv;
                best_a = a;
            }
        }
        let mut greedy = vec![0.0; na];
        greedy[best_a] = 1.0;
        policy_tv = policy_tv.max(tv_distance(&policy[s * na..(s + 1) * na], &greedy));
    }
    Ok(TvProfile {
        max_transition_tv: max_tv,
        mean_transition_tv: sum_tv / (mdp_true.n_states * mdp_true.n_actions) as f64,
        policy_greedy_tv: policy_tv,
    })
}

/// Largest per-state total variation between two policies on the same
/// state/action space.
pub fn policy_tv_max(n_states: usize, n_actions: usize, p1: &[f64], p2: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for s in 0..n_states {
        worst = worst.max(tv_distance(
            &p1[s * n_actions..(s + 1) * n_actions],
            &p2[s * n_actions..(s + 1) * n_actions],
        ));
    }
    worst
}
