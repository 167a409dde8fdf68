//! Online Newton Step (ONS) bettor.
//!
//! Chooses the bet `lambda_t` for the wealth process `prod (1 + lambda_i g_i)`
//! from the history of payoff arguments `g_i in [-1, 1]`:
//!
//! ```text
//! z_i      = g_i / (1 + lambda_i g_i)
//! lambda_t = clamp(lambda_{t-1} + c z_{t-1} / (1 + sum_{i<=t-1} z_i^2)),  c = 2 / (2 - ln 3)
//! ```
//!
//! The clamp interval is `[-1/2, 1/2]` intersected with the configured domain,
//! so every payoff `1 + lambda g` is at least `1/2`.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// `2 / (2 - ln 3)`.
pub const ONS_GAIN: f64 = 2.218_801_049_600_289;

pub const MAX_BET: f64 = 0.5;

/// Closed interval of admissible bets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetDomain {
    pub lo: f64,
    pub hi: f64,
}

impl BetDomain {
    pub const DEFAULT: BetDomain = BetDomain {
        lo: -MAX_BET,
        hi: MAX_BET,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(AuditError::Config(format!(
                "bet domain [{lo}, {hi}] is empty or unbounded"
            )));
        }
        if lo > 0.0 || hi < 0.0 {
            return Err(AuditError::Config(format!(
                "bet domain [{lo}, {hi}] must contain 0"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Domain on which both composite payoffs stay nonnegative:
    /// `[-1/(1-eps), 1/(1+eps)]`.
    pub fn composite(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(AuditError::Config(format!(
                "epsilon must be in (0,1), got {epsilon}"
            )));
        }
        Self::new(-1.0 / (1.0 - epsilon), 1.0 / (1.0 + epsilon))
    }

    /// The interval bets are actually clamped to: the domain intersected with
    /// `[-1/2, 1/2]`.
    pub fn effective(&self) -> (f64, f64) {
        (self.lo.max(-MAX_BET), self.hi.min(MAX_BET))
    }
}

impl Default for BetDomain {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BettorState {
    /// Bet for the next round.
    pub lambda: f64,
    /// Sum of squared normalized gradients `z_i^2` seen so far.
    pub grad_sq_sum: f64,
    pub domain: BetDomain,
}

impl BettorState {
    pub fn new(domain: BetDomain) -> Result<Self> {
        let domain = BetDomain::new(domain.lo, domain.hi)?;
        Ok(Self {
            lambda: 0.0,
            grad_sq_sum: 0.0,
            domain,
        })
    }

    /// One ONS step after observing payoff argument `g` under the current bet.
    pub fn update(&self, g: f64) -> Result<Self> {
        if g.is_nan() || g.abs() > 1.0 {
            return Err(AuditError::Domain(format!(
                "payoff argument must lie in [-1,1], got {g}"
            )));
        }
        let z = g / (1.0 + self.lambda * g);
        let grad_sq_sum = self.grad_sq_sum + z * z;
        let (lo, hi) = self.domain.effective();
        let lambda = (self.lambda + ONS_GAIN * z / (1.0 + grad_sq_sum)).clamp(lo, hi);
        Ok(Self {
            lambda,
            grad_sq_sum,
            domain: self.domain,
        })
    }
}

impl Default for BettorState {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            grad_sq_sum: 0.0,
            domain: BetDomain::DEFAULT,
        }
    }
}

/// ONS wealth guarantee `(1/V) exp(S^2 / (4 (V + |S|)))` for `S = sum g_i`,
/// `V = sum g_i^2`.
///
/// The guarantee is asymptotic: when `V` is small the leading `1/V` exceeds
/// any wealth reachable from `K_0 = 1` (at `t = 1` the wealth is exactly 1
/// while the bound is at least `1/g_1^2`). Use it as a check for `V` in the
/// tens and beyond.
pub fn wealth_lower_bound(s_sum: f64, v_sum: f64) -> Result<f64> {
    log_wealth_lower_bound(s_sum, v_sum).map(f64::exp)
}

/// Natural log of [`wealth_lower_bound`].
pub fn log_wealth_lower_bound(s_sum: f64, v_sum: f64) -> Result<f64> {
    if v_sum.is_nan() || v_sum <= 0.0 {
        return Err(AuditError::Domain(format!(
            "V must be positive, got {v_sum}"
        )));
    }
    Ok(-v_sum.ln() + s_sum * s_sum / (4.0 * (v_sum + s_sum.abs())))
}
