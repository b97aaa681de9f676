//! Constant sets feeding the prediction-error and gap bounds.

use serde::{Deserialize, Serialize};

use super::TheoryError;

/// Every constant of the theoretical apparatus in one place.
///
/// `l_pi` is the policy Lipschitz constant (written `L_a` in the action
/// assumption and `L_pi` in the gap coefficient; they are the same constant
/// here). `norm_a` bounds the linear feedthrough matrix of the theory cell
/// and defaults to its Frobenius bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionConstants {
    /// Frobenius bounds on the recurrent weight matrices.
    pub b_w: f64,
    pub b_u: f64,
    pub b_v: f64,
    /// Action magnitude bound.
    pub b_a: f64,
    /// State-representation magnitude bound.
    pub b_x: f64,
    /// Reward Lipschitz constant.
    pub l_r: f64,
    /// Policy Lipschitz constant.
    pub l_pi: f64,
    /// Activation Lipschitz constants.
    pub l_h: f64,
    pub l_z: f64,
    /// Discount factor, in (0, 1).
    pub gamma: f64,
    /// Lookahead horizon K, at least 1.
    pub horizon: usize,
    /// Reward magnitude bound.
    pub r_max: f64,
    /// Confidence level for the probabilistic bound, in (0, 1).
    pub delta: f64,
    /// Training-sample count.
    pub n: f64,
    /// Empirical training loss.
    pub l_n: f64,
    /// Latent state dimension.
    pub d: usize,
    /// Bound on the feedthrough matrix norm.
    pub norm_a: f64,
    /// Multiplier standing in for the big-O constant in the
    /// generalization term (fixed to 1 by default).
    pub big_o_const: f64,
}

impl Default for AssumptionConstants {
    fn default() -> Self {
        Self {
            b_w: 1.0,
            b_u: 1.0,
            b_v: 1.0,
            b_a: 1.0,
            b_x: 1.0,
            l_r: 1.0,
            l_pi: 1.0,
            l_h: 1.0,
            l_z: 1.0,
            gamma: 0.9,
            horizon: 5,
            r_max: 1.0,
            delta: 0.1,
            n: 1e6,
            l_n: 0.0,
            d: 8,
            norm_a: 1.0,
            big_o_const: 1.0,
        }
    }
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TheoryError::InvalidGamma(self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(TheoryError::InvalidDelta(self.delta));
        }
        if self.horizon < 1 {
            return Err(TheoryError::InvalidHorizon(self.horizon));
        }
        if self.n < 1.0 {
            return Err(TheoryError::InvalidSampleCount(self.n));
        }
        let bounds = [
            self.b_w, self.b_u, self.b_v, self.b_a, self.b_x, self.l_r, self.l_pi, self.l_h,
            self.l_z, self.r_max, self.l_n, self.norm_a, self.big_o_const,
        ];
        if bounds.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TheoryError::NegativeConstant);
        }
        Ok(())
    }
}
