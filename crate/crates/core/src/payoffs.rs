//! Payoff functions `S_t = 1 + lambda_t g_t`.
//!
//! Each constructor maps the round's model outputs (and, where relevant,
//! importance weights) to the payoff argument `g_t in [-1, 1]` and the
//! multiplicative wealth factor. With `|lambda| <= 1/2` every factor is
//! strictly positive.

use crate::betting::MAX_BET;
use crate::error::{AuditError, Result};
use crate::types::AuditRecord;

/// Slack allowed on `scale * weight <= 1/2` for floating-point rounding in
/// caller-computed scales such as `min 1/(2 w)`.
const SCALE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payoff {
    /// Multiplicative wealth factor.
    pub value: f64,
    /// Payoff argument fed to the bettor.
    pub g: f64,
}

impl Payoff {
    pub const ABSTAIN: Payoff = Payoff { value: 1.0, g: 0.0 };

    fn from_bet(lambda: f64, g: f64) -> Result<Self> {
        if g.is_nan() || g.abs() > 1.0 {
            return Err(AuditError::Invariant(format!(
                "payoff argument {g} outside [-1,1]; the corrective scale is inconsistent with the weights"
            )));
        }
        Ok(Self {
            value: 1.0 + lambda * g,
            g,
        })
    }
}

fn check_output(name: &str, y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(AuditError::Domain(format!("{name} out of [0,1]: {y}")))
    }
}

fn check_bet(lambda: f64) -> Result<()> {
    if lambda.abs() <= MAX_BET {
        Ok(())
    } else {
        Err(AuditError::Domain(format!(
            "bet {lambda} outside [-1/2, 1/2]"
        )))
    }
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(AuditError::Domain(format!(
            "{name} must be positive and finite, got {w}"
        )))
    }
}

/// `1 + lambda (y0 - y1)`.
pub fn payoff_simple(y0: f64, y1: f64, lambda: f64) -> Result<Payoff> {
    check_output("y0", y0)?;
    check_output("y1", y1)?;
    check_bet(lambda)?;
    Payoff::from_bet(lambda, y0 - y1)
}

/// Importance weights for one round and the corrective factor `L_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropensityContext {
    pub omega_0: f64,
    pub omega_1: f64,
    pub l_t: f64,
}

impl PropensityContext {
    /// Rejects an `l_t` with `l_t * omega_b > 1/2` at either observed point.
    pub fn new(omega_0: f64, omega_1: f64, l_t: f64) -> Result<Self> {
        check_weight("omega_0", omega_0)?;
        check_weight("omega_1", omega_1)?;
        check_weight("l_t", l_t)?;
        for (b, w) in [omega_0, omega_1].into_iter().enumerate() {
            if l_t * w > 0.5 * (1.0 + SCALE_TOLERANCE) {
                return Err(AuditError::Invariant(format!(
                    "l_t = {l_t} exceeds 1/(2 omega_{b}) = {}",
                    0.5 / w
                )));
            }
        }
        Ok(Self {
            omega_0,
            omega_1,
            l_t,
        })
    }

    /// Builds the context from two records carrying propensity and density.
    pub fn from_records(r0: &AuditRecord, r1: &AuditRecord, l_t: f64) -> Result<Self> {
        let w0 = r0.weight().ok_or_else(|| missing_weight(r0))?;
        let w1 = r1.weight().ok_or_else(|| missing_weight(r1))?;
        Self::new(w0, w1, l_t)
    }
}

fn missing_weight(r: &AuditRecord) -> AuditError {
    AuditError::Domain(format!(
        "record t={} group={} lacks propensity/density fields",
        r.t, r.group
    ))
}

/// `1 + lambda L_t (y0 w0 - y1 w1)`.
pub fn payoff_propensity(y0: f64, y1: f64, ctx: &PropensityContext, lambda: f64) -> Result<Payoff> {
    check_output("y0", y0)?;
    check_output("y1", y1)?;
    check_bet(lambda)?;
    let g = ctx.l_t * (y0 * ctx.omega_0 - y1 * ctx.omega_1);
    Payoff::from_bet(lambda, g)
}

/// Weights built from an estimated density, with the known bounds on its
/// multiplicative error and the scale `B_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedDensityContext {
    pub omega_hat_0: f64,
    pub omega_hat_1: f64,
    pub b_t: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl EstimatedDensityContext {
    /// Rejects a `b_t` above `delta_min * min_b 1/(2 omega_hat_b)`.
    pub fn new(
        omega_hat_0: f64,
        omega_hat_1: f64,
        b_t: f64,
        delta_min: f64,
        delta_max: f64,
    ) -> Result<Self> {
        check_weight("omega_hat_0", omega_hat_0)?;
        check_weight("omega_hat_1", omega_hat_1)?;
        check_weight("b_t", b_t)?;
        if !(delta_min > 0.0 && delta_min <= delta_max && delta_max.is_finite()) {
            return Err(AuditError::Config(format!(
                "need 0 < delta_min <= delta_max, got {delta_min}, {delta_max}"
            )));
        }
        let cap = delta_min * (0.5 / omega_hat_0).min(0.5 / omega_hat_1);
        if b_t > cap * (1.0 + SCALE_TOLERANCE) {
            return Err(AuditError::Invariant(format!(
                "b_t = {b_t} exceeds delta_min * min 1/(2 omega_hat) = {cap}"
            )));
        }
        Ok(Self {
            omega_hat_0,
            omega_hat_1,
            b_t,
            delta_min,
            delta_max,
        })
    }

    pub fn from_records(
        r0: &AuditRecord,
        r1: &AuditRecord,
        b_t: f64,
        delta_min: f64,
        delta_max: f64,
    ) -> Result<Self> {
        let w0 = r0.estimated_weight().ok_or_else(|| missing_estimate(r0))?;
        let w1 = r1.estimated_weight().ok_or_else(|| missing_estimate(r1))?;
        Self::new(w0, w1, b_t, delta_min, delta_max)
    }
}

fn missing_estimate(r: &AuditRecord) -> AuditError {
    AuditError::Domain(format!(
        "record t={} group={} lacks propensity/density_estimate fields",
        r.t, r.group
    ))
}

/// `1 + lambda B_t (w0_hat y0 / delta_max - w1_hat y1 / delta_min)`.
pub fn payoff_estimated_density(
    y0: f64,
    y1: f64,
    ctx: &EstimatedDensityContext,
    lambda: f64,
) -> Result<Payoff> {
    check_output("y0", y0)?;
    check_output("y1", y1)?;
    check_bet(lambda)?;
    let g = ctx.b_t * (ctx.omega_hat_0 * y0 / ctx.delta_max - ctx.omega_hat_1 * y1 / ctx.delta_min);
    Payoff::from_bet(lambda, g)
}

/// The two one-sided payoffs of the composite null `|mu0 - mu1| <= epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositePayoff {
    /// Tests `mu0 - mu1 <= epsilon`.
    pub q: Payoff,
    /// Tests `mu1 - mu0 <= epsilon`.
    pub r: Payoff,
}

pub fn payoff_composite(
    y0: f64,
    y1: f64,
    epsilon: f64,
    lambda_q: f64,
    lambda_r: f64,
) -> Result<CompositePayoff> {
    check_output("y0", y0)?;
    check_output("y1", y1)?;
    check_bet(lambda_q)?;
    check_bet(lambda_r)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(AuditError::Domain(format!(
            "epsilon must be in (0,1), got {epsilon}"
        )));
    }
    // g ranges over [-1-eps, 1-eps]; with |lambda| <= 1/2 the payoff stays >= (1-eps)/2.
    let g_q = y0 - y1 - epsilon;
    let g_r = y1 - y0 - epsilon;
    Ok(CompositePayoff {
        q: Payoff {
            value: 1.0 + lambda_q * g_q,
            g: g_q,
        },
        r: Payoff {
            value: 1.0 + lambda_r * g_r,
            g: g_r,
        },
    })
}

/// Outputs accumulated per side since the last bet, for asynchronous arrivals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchAccumulator {
    pending: [Vec<f64>; 2],
    counts: [u64; 2],
}

impl BatchAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record of group 0 or 1.
    pub fn push(&mut self, record: &AuditRecord) -> Result<()> {
        let side = record.group.index();
        if side > 1 {
            return Err(AuditError::Domain(format!(
                "batch accumulator takes groups 0 and 1, got {}",
                record.group
            )));
        }
        self.push_side(side, record.y_hat)
    }

    /// Appends an output to side 0 or 1 of a pairwise game.
    pub fn push_side(&mut self, side: usize, y_hat: f64) -> Result<()> {
        check_output("y_hat", y_hat)?;
        if side > 1 {
            return Err(AuditError::Domain(format!(
                "side must be 0 or 1, got {side}"
            )));
        }
        self.pending[side].push(y_hat);
        self.counts[side] += 1;
        Ok(())
    }

    pub fn pending(&self, side: usize) -> &[f64] {
        &self.pending[side]
    }

    /// Total outputs received per side.
    pub fn counts(&self) -> [u64; 2] {
        self.counts
    }

    pub fn is_ready(&self) -> bool {
        !self.pending[0].is_empty() && !self.pending[1].is_empty()
    }

    /// Bets on the difference of the pending means and clears both sides, or
    /// abstains (payoff 1, state untouched) while either side is empty.
    pub fn payoff(&mut self, lambda: f64) -> Result<Payoff> {
        check_bet(lambda)?;
        if !self.is_ready() {
            return Ok(Payoff::ABSTAIN);
        }
        let g = mean(&self.pending[0]) - mean(&self.pending[1]);
        self.pending[0].clear();
        self.pending[1].clear();
        Payoff::from_bet(lambda, g)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
