//! Domain types shared by the betting, payoff, engine and I/O layers.
//!
//! Every constructor validates its invariants and returns [`AuditError`]
//! instead of clamping out-of-range values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Dense group index in `{0, ..., J}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupLabel(pub u32);

impl GroupLabel {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Checks the label against a configured group count `J + 1`.
    pub fn check(self, group_count: usize) -> Result<Self> {
        if self.index() < group_count {
            Ok(self)
        } else {
            Err(AuditError::Domain(format!(
                "group {} out of range for {} groups",
                self.0, group_count
            )))
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One streamed model output, optionally carrying the sampling propensity
/// and (true or estimated) population density at the sampled point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub t: u64,
    pub group: GroupLabel,
    pub y_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_estimate: Option<f64>,
}

impl AuditRecord {
    /// A record without sampling information.
    pub fn new(t: u64, group: u32, y_hat: f64) -> Result<Self> {
        let record = Self {
            t,
            group: GroupLabel(group),
            y_hat,
            propensity: None,
            density: None,
            density_estimate: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_propensity(mut self, propensity: f64, density: f64) -> Result<Self> {
        self.propensity = Some(propensity);
        self.density = Some(density);
        self.validate()?;
        Ok(self)
    }

    pub fn with_density_estimate(mut self, density_estimate: f64) -> Result<Self> {
        self.density_estimate = Some(density_estimate);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(AuditError::Domain("time index must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.y_hat) {
            return Err(AuditError::Domain(format!(
                "y_hat out of [0,1]: {}",
                self.y_hat
            )));
        }
        if let Some(p) = self.propensity {
            if !(p > 0.0 && p.is_finite()) {
                return Err(AuditError::Domain(format!(
                    "propensity must be > 0, got {p}"
                )));
            }
        }
        if let Some(d) = self.density {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(AuditError::Domain(format!("density must be >= 0, got {d}")));
            }
        }
        if let Some(d) = self.density_estimate {
            if !(d > 0.0 && d.is_finite()) {
                return Err(AuditError::Domain(format!(
                    "density_estimate must be > 0, got {d}"
                )));
            }
        }
        Ok(())
    }

    /// Importance weight `density / propensity`, when both are attached.
    pub fn weight(&self) -> Option<f64> {
        Some(self.density? / self.propensity?)
    }

    /// Importance weight built from the density estimate.
    pub fn estimated_weight(&self) -> Option<f64> {
        Some(self.density_estimate? / self.propensity?)
    }
}

/// Which payoff construction a session uses.
///
/// `scale` is the per-step corrective factor (`L_t` for propensity payoffs,
/// `B_t` for estimated-density payoffs). It must be fixed before the data it
/// multiplies is seen; sessions also accept a per-step override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffStrategy {
    Simple,
    Batched,
    Propensity {
        scale: f64,
    },
    EstimatedDensity {
        delta_min: f64,
        delta_max: f64,
        scale: f64,
    },
    Composite {
        epsilon: f64,
    },
}

impl PayoffStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PayoffStrategy::Simple | PayoffStrategy::Batched => Ok(()),
            PayoffStrategy::Propensity { scale } => check_scale(scale),
            PayoffStrategy::EstimatedDensity {
                delta_min,
                delta_max,
                scale,
            } => {
                if !(delta_min > 0.0 && delta_min <= delta_max && delta_max.is_finite()) {
                    return Err(AuditError::Config(format!(
                        "need 0 < delta_min <= delta_max, got delta_min={delta_min}, delta_max={delta_max}"
                    )));
                }
                check_scale(scale)
            }
            PayoffStrategy::Composite { epsilon } => {
                if epsilon > 0.0 && epsilon < 1.0 {
                    Ok(())
                } else {
                    Err(AuditError::Config(format!(
                        "epsilon must be in (0,1), got {epsilon}"
                    )))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PayoffStrategy::Simple => "simple",
            PayoffStrategy::Batched => "batched",
            PayoffStrategy::Propensity { .. } => "propensity",
            PayoffStrategy::EstimatedDensity { .. } => "estimated_density",
            PayoffStrategy::Composite { .. } => "composite",
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(AuditError::Config(format!(
            "scale must be > 0, got {scale}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub alpha: f64,
    pub strategy: PayoffStrategy,
    pub group_count: usize,
    pub randomized_final_step: bool,
    pub seed: u64,
    /// Keep the per-step wealth trajectory. Has no effect on decisions or on
    /// the terminal uniform draw.
    #[serde(default = "default_true")]
    pub record_trajectory: bool,
}

fn default_true() -> bool {
    true
}

impl AuditConfig {
    pub fn new(alpha: f64, strategy: PayoffStrategy) -> Self {
        Self {
            alpha,
            strategy,
            group_count: 2,
            randomized_final_step: false,
            seed: 0,
            record_trajectory: true,
        }
    }

    pub fn with_groups(mut self, group_count: usize) -> Self {
        self.group_count = group_count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_randomized_final_step(mut self, enabled: bool) -> Self {
        self.randomized_final_step = enabled;
        self
    }

    pub fn with_trajectory(mut self, enabled: bool) -> Self {
        self.record_trajectory = enabled;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AuditError::Config(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if self.group_count < 2 {
            return Err(AuditError::Config(format!(
                "group_count must be >= 2, got {}",
                self.group_count
            )));
        }
        if matches!(self.strategy, PayoffStrategy::Composite { .. }) && self.group_count != 2 {
            return Err(AuditError::Config(
                "the composite null is defined for exactly two groups".into(),
            ));
        }
        self.strategy.validate()
    }

    /// Number of games played in parallel: two for the composite null, one per
    /// adjacent group pair otherwise.
    pub fn game_count(&self) -> usize {
        match self.strategy {
            PayoffStrategy::Composite { .. } => 2,
            _ => self.group_count - 1,
        }
    }

    /// Per-game rejection threshold: `games / alpha`.
    pub fn threshold(&self) -> f64 {
        self.game_count() as f64 / self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub wealth: f64,
    pub log_wealth: f64,
}

/// A wealth process `K_t`, kept in log space, plus the running sums of the
/// payoff arguments used by the ONS wealth guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthState {
    pub log_wealth: f64,
    pub step: u64,
    /// Sum of payoff arguments `g`.
    pub s_sum: f64,
    /// Sum of `g^2`.
    pub v_sum: f64,
    /// Sum of `|g|`.
    pub w_sum: f64,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

impl WealthState {
    pub fn new(record_trajectory: bool) -> Self {
        Self {
            log_wealth: 0.0,
            step: 0,
            s_sum: 0.0,
            v_sum: 0.0,
            w_sum: 0.0,
            trajectory: record_trajectory.then(Vec::new),
        }
    }

    pub fn wealth(&self) -> f64 {
        self.log_wealth.exp()
    }

    /// Multiplies the wealth by `payoff`, whose argument was `g`.
    pub fn apply(&mut self, payoff: f64, g: f64) -> Result<()> {
        if !(payoff > 0.0 && payoff.is_finite()) {
            return Err(AuditError::Invariant(format!(
                "payoff must be positive and finite, got {payoff}"
            )));
        }
        self.log_wealth += payoff.ln();
        self.step += 1;
        self.s_sum += g;
        self.v_sum += g * g;
        self.w_sum += g.abs();
        if let Some(trajectory) = self.trajectory.as_mut() {
            trajectory.push(TrajectoryPoint {
                step: self.step,
                wealth: self.log_wealth.exp(),
                log_wealth: self.log_wealth,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Reject,
    Continue,
    FinalRandomizedReject,
    FinalFailToReject,
}

impl DecisionKind {
    pub fn is_terminal(self) -> bool {
        !matches!(self, DecisionKind::Continue)
    }

    pub fn is_rejection(self) -> bool {
        matches!(
            self,
            DecisionKind::Reject | DecisionKind::FinalRandomizedReject
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: DecisionKind,
    /// Stopping time: the step at which wealth first crossed the threshold, or
    /// the step at which the terminal randomized check was made.
    pub tau: Option<u64>,
    /// The uniform draw of the terminal randomized step.
    pub u_draw: Option<f64>,
}

impl Decision {
    pub const CONTINUE: Decision = Decision {
        kind: DecisionKind::Continue,
        tau: None,
        u_draw: None,
    };
}

/// Final state of one game inside a composite or multi-group audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub game: String,
    pub wealth_final: f64,
    pub log_wealth_final: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub decision: Decision,
    pub config: AuditConfig,
    /// Per-game rejection threshold (`games / alpha`).
    pub threshold: f64,
    pub steps: u64,
    /// Largest wealth across games.
    pub wealth_final: f64,
    pub log_wealth_final: f64,
    pub rejecting_game: Option<String>,
    /// Step-wise maximum of the game wealths.
    pub trajectory: Vec<TrajectoryPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_game: Option<Vec<GameReport>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_rejects_out_of_range_output() {
        assert!(matches!(
            AuditRecord::new(1, 0, 1.3),
            Err(AuditError::Domain(_))
        ));
        assert!(AuditRecord::new(1, 0, f64::NAN).is_err());
        assert!(AuditRecord::new(0, 0, 0.5).is_err());
    }

    #[test]
    fn record_rejects_bad_sampling_fields() {
        let r = AuditRecord::new(5, 1, 0.2).unwrap();
        assert!(r.with_propensity(0.0, 0.5).is_err());
        assert!(r.with_propensity(0.25, -0.1).is_err());
        assert!(r.with_density_estimate(0.0).is_err());
        let r = r.with_propensity(0.25, 0.5).unwrap();
        assert_eq!(r.weight(), Some(2.0));
    }

    #[test]
    fn config_validation() {
        assert!(AuditConfig::new(0.0, PayoffStrategy::Simple)
            .validate()
            .is_err());
        assert!(AuditConfig::new(1.0, PayoffStrategy::Simple)
            .validate()
            .is_err());
        assert!(AuditConfig::new(0.05, PayoffStrategy::Simple)
            .with_groups(1)
            .validate()
            .is_err());
        assert!(
            AuditConfig::new(0.05, PayoffStrategy::Composite { epsilon: 1.0 })
                .validate()
                .is_err()
        );
        assert!(AuditConfig::new(
            0.05,
            PayoffStrategy::EstimatedDensity {
                delta_min: 1.2,
                delta_max: 1.1,
                scale: 0.1
            }
        )
        .validate()
        .is_err());
        assert!(AuditConfig::new(
            0.05,
            PayoffStrategy::EstimatedDensity {
                delta_min: 0.0,
                delta_max: 1.1,
                scale: 0.1
            }
        )
        .validate()
        .is_err());
    }

    #[test]
    fn thresholds_follow_game_count() {
        let simple = AuditConfig::new(0.05, PayoffStrategy::Simple);
        assert!((simple.threshold() - 20.0).abs() < 1e-12);
        let composite = AuditConfig::new(0.05, PayoffStrategy::Composite { epsilon: 0.1 });
        assert!((composite.threshold() - 40.0).abs() < 1e-12);
        let multi = AuditConfig::new(0.05, PayoffStrategy::Simple).with_groups(3);
        assert_eq!(multi.game_count(), 2);
        assert!((multi.threshold() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn wealth_is_product_of_payoffs() {
        let mut w = WealthState::new(true);
        w.apply(1.5, 1.0).unwrap();
        w.apply(0.5, -1.0).unwrap();
        assert!((w.wealth() - 0.75).abs() < 1e-15);
        assert_eq!(w.step, 2);
        assert_eq!(w.v_sum, 2.0);
        assert_eq!(w.trajectory.as_ref().unwrap().len(), 2);
        assert!(w.apply(0.0, 0.0).is_err());
    }
}
