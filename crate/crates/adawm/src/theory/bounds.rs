//! Closed-form evaluation of the multi-step prediction-error bound, the
//! planning performance-gap bound, and the update-selection rule derived
//! from it.

use serde::{Deserialize, Serialize};

use super::constants::AssumptionConstants;
use super::TheoryError;

/// Which component the selection rule says to update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateChoice {
    ModelUpdate,
    PolicyUpdate,
}

/// Full audit trail of one gap-bound evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    /// Discounted value-shift coefficient.
    pub gamma_cap: f64,
    /// Q-function Lipschitz constant `l_r / (1 - gamma)`.
    pub l_q: f64,
    /// Generalization term per rollout depth `1..=K` (empty when the
    /// prediction error was supplied externally rather than derived).
    pub psi_per_k: Vec<f64>,
    /// Prediction-error bound per rollout depth `1..=K` (empty when
    /// supplied externally).
    pub e_pred_per_k: Vec<f64>,
    /// Worst-case prediction error over depths.
    pub e_max: f64,
    /// Dynamics-mismatch estimate fed into the bound.
    pub e_phat: f64,
    /// Policy-mismatch estimate fed into the bound.
    pub e_pi: f64,
    /// Model-side share of the gap bound.
    pub model_term: f64,
    /// Policy-side share of the gap bound.
    pub policy_term: f64,
    /// `model_term + policy_term`.
    pub total_bound: f64,
    /// Selection-rule coefficients.
    pub c1: f64,
    pub c2: f64,
    /// What the rule selects for these inputs.
    pub choice: UpdateChoice,
}

/// The discounted value-shift coefficient.
///
/// `gamma_cap = (1 - gamma^(K-1)) / (1 - gamma) * l_r * (1 + l_pi)
///            + gamma^K * l_q * (1 + l_pi)` with `l_q = l_r / (1 - gamma)`.
pub fn gamma_cap(c: &AssumptionConstants) -> Result<f64, TheoryError> {
    c.validate()?;
    let k = c.horizon as i32;
    let l_q = c.l_r / (1.0 - c.gamma);
    Ok((1.0 - c.gamma.powi(k - 1)) / (1.0 - c.gamma) * c.l_r * (1.0 + c.l_pi)
        + c.gamma.powi(k) * l_q * (1.0 + c.l_pi))
}

/// Weight-matrix product bound entering the generalization term:
/// `b_v * b_u * (b_w^k - 1) / (b_w - 1)`, continued as `k * b_v * b_u`
/// at `b_w == 1` (the limit of the geometric sum).
pub fn weight_product_bound(k: usize, c: &AssumptionConstants) -> f64 {
    if (c.b_w - 1.0).abs() < 1e-12 {
        k as f64 * c.b_v * c.b_u
    } else {
        c.b_v * c.b_u * (c.b_w.powi(k as i32) - 1.0) / (c.b_w - 1.0)
    }
}

/// Generalization term at rollout depth `k`:
///
/// `psi_k = l_n + 3 * sqrt(ln(2/delta) / (2n))
///        + big_o_const * d * m * b_a * (1 + sqrt(2 ln2 * k)) / sqrt(n)`
///
/// where `m = weight_product_bound(k)`.
pub fn psi(k: usize, c: &AssumptionConstants) -> Result<f64, TheoryError> {
    c.validate()?;
    if k < 1 {
        return Err(TheoryError::InvalidHorizon(k));
    }
    let m = weight_product_bound(k, c);
    let conf = 3.0 * ((2.0 / c.delta).ln() / (2.0 * c.n)).sqrt();
    let complexity = c.big_o_const * c.d as f64 * m * c.b_a
        * (1.0 + (2.0 * std::f64::consts::LN_2 * k as f64).sqrt())
        / c.n.sqrt();
    Ok(c.l_n + conf + complexity)
}

/// Per-step amplification constant `n = l_h * l_z * b_v * b_u * l_pi`.
pub fn amplification(c: &AssumptionConstants) -> f64 {
    c.l_h * c.l_z * c.b_v * c.b_u * c.l_pi
}

/// Initial-condition constant `n1 = l_h * l_z * b_v * b_w + l_z * b_v * norm_a`.
pub fn initial_amplification(c: &AssumptionConstants) -> f64 {
    c.l_h * c.l_z * c.b_v * c.b_w + c.l_z * c.b_v * c.norm_a
}

/// Multi-step prediction-error bound at rollout depth `k`.
///
/// `e_{delta,k} = sum_{h=1}^{k} n^h * ((1/delta) * (2 h b_x e_p + n1 e_x)
///                                     + sqrt(psi_h))`
///
/// with `e_p` the one-step transition mismatch and `e_x` the initial
/// representation mismatch.
pub fn lemma1_prediction_bound(
    k: usize,
    c: &AssumptionConstants,
    e_p: f64,
    e_x: f64,
) -> Result<f64, TheoryError> {
    c.validate()?;
    if k < 1 {
        return Err(TheoryError::InvalidHorizon(k));
    }
    let n = amplification(c);
    let n1 = initial_amplification(c);
    let mut total = 0.0;
    for h in 1..=k {
        let drift = (2.0 * h as f64 * c.b_x * e_p + n1 * e_x) / c.delta;
        total += n.powi(h as i32) * (drift + psi(h, c)?.sqrt());
    }
    Ok(total)
}

/// Worst-case prediction error over rollout depths `1..=K`.
pub fn prediction_error_max(
    c: &AssumptionConstants,
    e_p: f64,
    e_x: f64,
) -> Result<f64, TheoryError> {
    c.validate()?;
    let mut best = f64::NEG_INFINITY;
    for k in 1..=c.horizon {
        best = best.max(lemma1_prediction_bound(k, c, e_p, e_x)?);
    }
    Ok(best)
}

/// Selection-rule coefficients.
///
/// `c1 = 2 r_max (1 - gamma^K) / (gamma - gamma^2) + 2` and
/// `c2 = gamma^(K-1) * e_max / (2 gamma_cap)`.
pub fn c1_c2(c: &AssumptionConstants, e_max: f64) -> Result<(f64, f64), TheoryError> {
    c.validate()?;
    let k = c.horizon as i32;
    let g = gamma_cap(c)?;
    if g <= 0.0 {
        return Err(TheoryError::DegenerateGammaCap(g));
    }
    let c1 = 2.0 * c.r_max * (1.0 - c.gamma.powi(k)) / (c.gamma - c.gamma * c.gamma) + 2.0;
    let c2 = c.gamma.powi(k - 1) * e_max / (2.0 * g);
    Ok((c1, c2))
}

/// Performance-gap bound between planning under the learned model with the
/// current policy and planning under the true dynamics with the target
/// policy. Splits the bound into the share attributable to model mismatch
/// and the share attributable to policy mismatch, and records the update
/// the selection rule picks.
///
/// `model_term  = gamma^K e_max / (1 - gamma^K)
///              + gamma_cap * 2 gamma e_phat / (1 - gamma^K)`
/// `policy_term = gamma_cap * (4 r_max e_pi / (1 - gamma)
///              + 4 gamma e_pi / (1 - gamma^K))`
pub fn theorem1_gap_bound(
    e_max: f64,
    e_phat: f64,
    e_pi: f64,
    c: &AssumptionConstants,
) -> Result<BoundReport, TheoryError> {
    c.validate()?;
    for (name, v) in [("e_max", e_max), ("e_phat", e_phat), ("e_pi", e_pi)] {
        if !v.is_finite() || v < 0.0 {
            return Err(TheoryError::InvalidMismatch { name, value: v });
        }
    }
    let k = c.horizon as i32;
    let g = gamma_cap(c)?;
    let denom = 1.0 - c.gamma.powi(k);
    let model_term = c.gamma.powi(k) * e_max / denom + g * 2.0 * c.gamma * e_phat / denom;
    let policy_term =
        g * (4.0 * c.r_max * e_pi / (1.0 - c.gamma) + 4.0 * c.gamma * e_pi / denom);
    let (c1, c2) = c1_c2(c, e_max)?;
    let choice = if model_term > policy_term {
        UpdateChoice::ModelUpdate
    } else {
        UpdateChoice::PolicyUpdate
    };
    Ok(BoundReport {
        gamma_cap: g,
        l_q: c.l_r / (1.0 - c.gamma),
        psi_per_k: Vec::new(),
        e_pred_per_k: Vec::new(),
        e_max,
        e_phat,
        e_pi,
        model_term,
        policy_term,
        total_bound: model_term + policy_term,
        c1,
        c2,
        choice,
    })
}

/// Full pipeline: derive the per-depth prediction errors from `e_p`/`e_x`,
/// take their maximum as `e_max`, and evaluate the gap bound.
pub fn bound_report(
    c: &AssumptionConstants,
    e_p: f64,
    e_x: f64,
    e_phat: f64,
    e_pi: f64,
) -> Result<BoundReport, TheoryError> {
    c.validate()?;
    let mut psi_per_k = Vec::with_capacity(c.horizon);
    let mut e_pred_per_k = Vec::with_capacity(c.horizon);
    for k in 1..=c.horizon {
        psi_per_k.push(psi(k, c)?);
        e_pred_per_k.push(lemma1_prediction_bound(k, c, e_p, e_x)?);
    }
    let e_max = e_pred_per_k.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut report = theorem1_gap_bound(e_max, e_phat, e_pi, c)?;
    report.psi_per_k = psi_per_k;
    report.e_pred_per_k = e_pred_per_k;
    Ok(report)
}

/// The threshold form of the selection rule: update the model when
/// `e_phat - c1 * e_pi + c2 > 0`, otherwise update the policy.
pub fn threshold_choice(
    c: &AssumptionConstants,
    e_max: f64,
    e_phat: f64,
    e_pi: f64,
) -> Result<UpdateChoice, TheoryError> {
    let (c1, c2) = c1_c2(c, e_max)?;
    Ok(if e_phat - c1 * e_pi + c2 > 0.0 {
        UpdateChoice::ModelUpdate
    } else {
        UpdateChoice::PolicyUpdate
    })
}

/// Verify that comparing the two bound shares and applying the threshold
/// rule select the same component. The two sides are exactly proportional:
///
/// `model_term - policy_term
///    = (2 gamma gamma_cap / (1 - gamma^K)) * (e_phat - c1 e_pi + c2)`
///
/// so the only way they can disagree is a floating-point tie; inputs whose
/// margin `|e_phat - c1 e_pi + c2|` is below `tie_tol` are reported as ties
/// rather than agreement or disagreement.
pub fn decision_equivalence_check(
    c: &AssumptionConstants,
    e_max: f64,
    e_phat: f64,
    e_pi: f64,
    tie_tol: f64,
) -> Result<EquivalenceOutcome, TheoryError> {
    let report = theorem1_gap_bound(e_max, e_phat, e_pi, c)?;
    let (c1, c2) = (report.c1, report.c2);
    let margin = e_phat - c1 * e_pi + c2;
    if margin.abs() <= tie_tol {
        return Ok(EquivalenceOutcome::Tie { margin });
    }
    let threshold = threshold_choice(c, e_max, e_phat, e_pi)?;
    Ok(if threshold == report.choice {
        EquivalenceOutcome::Agree { choice: threshold, margin }
    } else {
        EquivalenceOutcome::Disagree {
            bound_choice: report.choice,
            threshold_choice: threshold,
            margin,
        }
    })
}

/// Result of one decision-equivalence probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EquivalenceOutcome {
    Agree { choice: UpdateChoice, margin: f64 },
    Tie { margin: f64 },
    Disagree { bound_choice: UpdateChoice, threshold_choice: UpdateChoice, margin: f64 },
}
