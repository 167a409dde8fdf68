//! Seeded stream generators and a Monte Carlo driver.
//!
//! Scenario families:
//!
//! * `FixedMeans`: Bernoulli outputs with constant per-group means;
//! * `LogisticDrift`: equal means until an onset, after which group 1's mean
//!   follows a logistic curve;
//! * `SinusoidalDrift`: sine-wave means with a linear drift on group 1 and
//!   Gaussian noise on the Bernoulli parameter;
//! * `PolicyPopulation`: a finite population sampled by a (possibly
//!   time-varying) policy, with the sampling propensity and true density
//!   attached to every record.
//!
//! Every replicate draws from its own generator seeded by
//! `derive_seed(master, replicate)`, so results do not depend on scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::run_stream;
use crate::error::{AuditError, Result};
use crate::seeds::derive_seed;
use crate::types::{
    AuditConfig, AuditRecord, DecisionKind, GroupLabel, PayoffStrategy, TrajectoryPoint,
};

const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrivals {
    /// One record per group at every time step.
    #[default]
    Paired,
    /// A single record per time step: group 0 on odd `t`, group 1 on even `t`.
    Alternating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPhase {
    /// First time step this policy applies to.
    pub start: u64,
    /// Sampling probability of each support point.
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    /// Population density of each support point, per group.
    pub rho: Vec<Vec<f64>>,
    /// Model output at each support point, per group.
    pub phi: Vec<Vec<f64>>,
    /// Estimated densities attached as `density_estimate` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_hat: Option<Vec<Vec<f64>>>,
    /// Sampling policies ordered by start; the first starts at `t = 1`.
    pub policy: Vec<PolicyPhase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    FixedMeans {
        means: Vec<f64>,
    },
    LogisticDrift {
        base: f64,
        amplitude: f64,
        onset: u64,
        midpoint: f64,
        scale: f64,
    },
    SinusoidalDrift {
        amplitude_0: f64,
        period_0: f64,
        offset_0: f64,
        amplitude_1: f64,
        period_1: f64,
        offset_1: f64,
        slope_1: f64,
        noise_sd: f64,
    },
    PolicyPopulation(Population),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub arrivals: Arrivals,
}

impl Population {
    fn support_len(&self) -> usize {
        self.rho.first().map_or(0, Vec::len)
    }

    pub fn group_count(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.support_len();
        let groups = self.rho.len();
        if groups < 2 || n == 0 {
            return Err(AuditError::Config(
                "population needs at least two groups and one support point".into(),
            ));
        }
        if !self.labels.is_empty() && self.labels.len() != n {
            return Err(AuditError::Config(
                "labels must match the support size".into(),
            ));
        }
        if self.phi.len() != groups {
            return Err(AuditError::Config("phi must have one row per group".into()));
        }
        for (b, (rho, phi)) in self.rho.iter().zip(&self.phi).enumerate() {
            check_distribution(&format!("rho[{b}]"), rho, n)?;
            if phi.len() != n || phi.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(AuditError::Config(format!(
                    "phi[{b}] must have {n} values in [0,1]"
                )));
            }
        }
        if let Some(rho_hat) = &self.rho_hat {
            if rho_hat.len() != groups {
                return Err(AuditError::Config(
                    "rho_hat must have one row per group".into(),
                ));
            }
            for (b, (est, rho)) in rho_hat.iter().zip(&self.rho).enumerate() {
                if est.len() != n
                    || est
                        .iter()
                        .zip(rho)
                        .any(|(e, r)| e.is_nan() || *e < 0.0 || (*r > 0.0) != (*e > 0.0))
                {
                    return Err(AuditError::Config(format!(
                        "rho_hat[{b}] must be nonnegative and positive exactly where rho is"
                    )));
                }
            }
        }
        if self.policy.first().map(|p| p.start) != Some(1) {
            return Err(AuditError::Config(
                "the first policy phase must start at t = 1".into(),
            ));
        }
        for (i, phase) in self.policy.iter().enumerate() {
            if i > 0 && phase.start <= self.policy[i - 1].start {
                return Err(AuditError::Config(
                    "policy phases must have increasing starts".into(),
                ));
            }
            check_distribution(&format!("policy[{i}].pi"), &phase.pi, n)?;
            for (x, &p) in phase.pi.iter().enumerate() {
                if p <= 0.0 && self.rho.iter().any(|rho| rho[x] > 0.0) {
                    return Err(AuditError::Config(format!(
                        "policy[{i}] gives zero mass to support point {x} which has positive density"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn policy_at(&self, t: u64) -> &[f64] {
        let i = self.policy.partition_point(|p| p.start <= t);
        &self.policy[i.saturating_sub(1)].pi
    }

    pub fn mean(&self, group: usize) -> f64 {
        self.rho[group]
            .iter()
            .zip(&self.phi[group])
            .map(|(r, f)| r * f)
            .sum()
    }

    /// Largest `L` with `L * rho_b(x) / pi_t(x) <= 1/2` for every group,
    /// support point and phase.
    pub fn propensity_scale(&self) -> f64 {
        self.scale_for(&self.rho)
    }

    fn scale_for(&self, rho: &[Vec<f64>]) -> f64 {
        let mut scale = f64::INFINITY;
        for phase in &self.policy {
            for row in rho {
                for (r, p) in row.iter().zip(&phase.pi) {
                    if *r > 0.0 {
                        scale = scale.min(p / (2.0 * r));
                    }
                }
            }
        }
        scale
    }

    /// `EstimatedDensity` strategy with the tightest error bounds and the
    /// largest admissible scale for the attached estimates.
    pub fn estimated_density_strategy(&self) -> Result<PayoffStrategy> {
        let rho_hat = self
            .rho_hat
            .as_ref()
            .ok_or_else(|| AuditError::Config("population has no density estimates".into()))?;
        let (mut delta_min, mut delta_max) = (f64::INFINITY, 0.0f64);
        for (est, rho) in rho_hat.iter().zip(&self.rho) {
            for (e, r) in est.iter().zip(rho) {
                if *r > 0.0 {
                    delta_min = delta_min.min(e / r);
                    delta_max = delta_max.max(e / r);
                }
            }
        }
        Ok(PayoffStrategy::EstimatedDensity {
            delta_min,
            delta_max,
            scale: delta_min * self.scale_for(rho_hat),
        })
    }

    /// Shifts the outputs of every group whose mean is below the largest mean
    /// so all group means are equal. The distributions still differ.
    pub fn equalized(&self) -> Result<Self> {
        let target = (0..self.group_count())
            .map(|b| self.mean(b))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = self.clone();
        for (b, phi) in out.phi.iter_mut().enumerate() {
            let shift = target - self.mean(b);
            for v in phi.iter_mut() {
                *v += shift;
                if *v > 1.0 + PROBABILITY_TOLERANCE {
                    return Err(AuditError::Config(format!(
                        "equalizing group {b} pushes an output above 1"
                    )));
                }
                *v = v.min(1.0);
            }
        }
        Ok(out)
    }
}

fn check_distribution(name: &str, p: &[f64], n: usize) -> Result<()> {
    if p.len() != n || p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(AuditError::Config(format!(
            "{name} must have {n} nonnegative entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(AuditError::Config(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

impl Scenario {
    pub fn new(name: impl Into<String>, kind: ScenarioKind, horizon: u64) -> Result<Self> {
        let s = Self {
            name: name.into(),
            kind,
            horizon,
            seed: 0,
            arrivals: Arrivals::Paired,
        };
        s.validate()?;
        Ok(s)
    }

    /// Two groups with means `0.5 + delta/2` and `0.5 - delta/2`.
    pub fn mean_gap(delta: f64, horizon: u64) -> Result<Self> {
        Self::new(
            format!("delta={delta}"),
            ScenarioKind::FixedMeans {
                means: vec![0.5 + delta / 2.0, 0.5 - delta / 2.0],
            },
            horizon,
        )
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_arrivals(mut self, arrivals: Arrivals) -> Result<Self> {
        self.arrivals = arrivals;
        self.validate()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: u64) -> Result<Self> {
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    pub fn group_count(&self) -> usize {
        match &self.kind {
            ScenarioKind::FixedMeans { means } => means.len(),
            ScenarioKind::PolicyPopulation(p) => p.group_count(),
            _ => 2,
        }
    }

    /// Records emitted per time step.
    pub fn records_per_step(&self) -> usize {
        match self.arrivals {
            Arrivals::Paired => self.group_count(),
            Arrivals::Alternating => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(AuditError::Config("horizon must be >= 1".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.kind {
            ScenarioKind::FixedMeans { means } => {
                if means.len() < 2 {
                    return Err(AuditError::Config("need at least two groups".into()));
                }
            }
            ScenarioKind::LogisticDrift {
                base,
                amplitude,
                midpoint,
                scale,
                ..
            } => {
                if !finite(&[*base, *amplitude, *midpoint]) || !(*scale > 0.0 && scale.is_finite())
                {
                    return Err(AuditError::Config(
                        "logistic drift needs finite constants and scale > 0".into(),
                    ));
                }
            }
            ScenarioKind::SinusoidalDrift {
                amplitude_0,
                period_0,
                offset_0,
                amplitude_1,
                period_1,
                offset_1,
                slope_1,
                noise_sd,
            } => {
                if !finite(&[*amplitude_0, *offset_0, *amplitude_1, *offset_1, *slope_1])
                    || !(*period_0 > 0.0 && *period_1 > 0.0)
                    || !(*noise_sd >= 0.0 && noise_sd.is_finite())
                {
                    return Err(AuditError::Config(
                        "sinusoidal drift needs finite constants, positive periods and noise_sd >= 0".into(),
                    ));
                }
            }
            ScenarioKind::PolicyPopulation(p) => p.validate()?,
        }
        if self.arrivals == Arrivals::Alternating && self.group_count() != 2 {
            return Err(AuditError::Config(
                "alternating arrivals need exactly two groups".into(),
            ));
        }
        for b in 0..self.group_count() {
            match &self.kind {
                ScenarioKind::FixedMeans { .. } | ScenarioKind::PolicyPopulation(_) => {
                    check_mean(self.mean_unchecked(b, 1), b, 1)?;
                }
                _ => {
                    for t in 1..=self.horizon {
                        check_mean(self.mean_unchecked(b, t), b, t)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Noiseless mean of `group` at step `t` (1-based, at most the horizon).
    pub fn mean_at(&self, group: GroupLabel, t: u64) -> Result<f64> {
        let b = group.check(self.group_count())?.index();
        if t == 0 || t > self.horizon {
            return Err(AuditError::Domain(format!(
                "t = {t} outside 1..={}",
                self.horizon
            )));
        }
        Ok(self.mean_unchecked(b, t))
    }

    fn mean_unchecked(&self, b: usize, t: u64) -> f64 {
        let tf = t as f64;
        match &self.kind {
            ScenarioKind::FixedMeans { means } => means[b],
            ScenarioKind::LogisticDrift {
                base,
                amplitude,
                onset,
                midpoint,
                scale,
            } => {
                if b == 0 || t < *onset {
                    *base
                } else {
                    base + amplitude / (1.0 + ((midpoint - tf) / scale).exp())
                }
            }
            ScenarioKind::SinusoidalDrift {
                amplitude_0,
                period_0,
                offset_0,
                amplitude_1,
                period_1,
                offset_1,
                slope_1,
                ..
            } => {
                if b == 0 {
                    amplitude_0 * (tf / period_0).sin() + offset_0
                } else {
                    amplitude_1 * (tf / period_1).sin() + offset_1 + slope_1 * tf
                }
            }
            ScenarioKind::PolicyPopulation(p) => p.mean(b),
        }
    }
}

fn check_mean(mean: f64, group: usize, t: u64) -> Result<()> {
    if (0.0..=1.0).contains(&mean) {
        Ok(())
    } else {
        Err(AuditError::Config(format!(
            "mean of group {group} at t = {t} is {mean}, outside [0,1]"
        )))
    }
}

/// Seeded record stream for one scenario replicate.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    scenario: Scenario,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    samplers: Vec<(u64, WeightedIndex<f64>)>,
    t: u64,
    clamp_count: u64,
    buffer: std::collections::VecDeque<AuditRecord>,
}

impl StreamGenerator {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let noise = match scenario.kind {
            ScenarioKind::SinusoidalDrift { noise_sd, .. } if noise_sd > 0.0 => {
                Some(Normal::new(0.0, noise_sd).map_err(|e| AuditError::Config(e.to_string()))?)
            }
            _ => None,
        };
        let samplers = match &scenario.kind {
            ScenarioKind::PolicyPopulation(p) => p
                .policy
                .iter()
                .map(|phase| {
                    WeightedIndex::new(&phase.pi)
                        .map(|w| (phase.start, w))
                        .map_err(|e| AuditError::Config(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        Ok(Self {
            scenario: scenario.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            samplers,
            t: 0,
            clamp_count: 0,
            buffer: Default::default(),
        })
    }

    /// Noisy Bernoulli parameters that fell outside `[0,1]` and were clamped.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    /// Records for the next time step, or `None` past the horizon.
    pub fn next_step(&mut self) -> Option<Vec<AuditRecord>> {
        if self.t >= self.scenario.horizon {
            return None;
        }
        self.t += 1;
        let t = self.t;
        let groups: Vec<usize> = match self.scenario.arrivals {
            Arrivals::Paired => (0..self.scenario.group_count()).collect(),
            Arrivals::Alternating => vec![if t % 2 == 1 { 0 } else { 1 }],
        };
        Some(groups.into_iter().map(|b| self.draw(b, t)).collect())
    }

    fn draw(&mut self, b: usize, t: u64) -> AuditRecord {
        let group = b as u32;
        if let ScenarioKind::PolicyPopulation(pop) = &self.scenario.kind {
            let i = self.samplers.partition_point(|(start, _)| *start <= t) - 1;
            let x = self.samplers[i].1.sample(&mut self.rng);
            let pi = pop.policy[i].pi[x];
            let mut r = AuditRecord::new(t, group, pop.phi[b][x])
                .and_then(|r| r.with_propensity(pi, pop.rho[b][x]))
                .expect("validated population yields valid records");
            if let Some(rho_hat) = &pop.rho_hat {
                r = r
                    .with_density_estimate(rho_hat[b][x])
                    .expect("validated estimate");
            }
            return r;
        }
        let mut p = self.scenario.mean_unchecked(b, t);
        if let Some(noise) = &self.noise {
            p += noise.sample(&mut self.rng);
            if !(0.0..=1.0).contains(&p) {
                self.clamp_count += 1;
                p = p.clamp(0.0, 1.0);
            }
        }
        let y = if self.rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        };
        AuditRecord::new(t, group, y).expect("Bernoulli output is in [0,1]")
    }
}

impl Iterator for StreamGenerator {
    type Item = AuditRecord;

    fn next(&mut self) -> Option<AuditRecord> {
        if self.buffer.is_empty() {
            let step = self.next_step()?;
            self.buffer.extend(step);
        }
        self.buffer.pop_front()
    }
}

/// One paired draw at step `t` from a fresh generator state.
pub fn draw_pair<R: Rng>(scenario: &Scenario, t: u64, rng: &mut R) -> Result<Vec<AuditRecord>> {
    if t == 0 || t > scenario.horizon {
        return Err(AuditError::Domain(format!(
            "t = {t} outside 1..={}",
            scenario.horizon
        )));
    }
    let mut generator = StreamGenerator::new(scenario, rng.random())?;
    generator.t = t - 1;
    Ok(generator.next_step().unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub rejected: bool,
    pub decision: DecisionKind,
    pub tau: Option<u64>,
    pub rejecting_game: Option<String>,
    pub log_wealth_final: f64,
    pub clamp_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub scenario: String,
    pub replicates: usize,
    pub rejections: usize,
    /// False-positive rate under a null scenario, power otherwise.
    pub rejection_rate: f64,
    /// Statistics of the stopping step over rejecting runs.
    pub tau_mean: Option<f64>,
    pub tau_q10: Option<f64>,
    pub tau_q50: Option<f64>,
    pub tau_q90: Option<f64>,
    pub clamp_count: u64,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Runs `replicates` independent audits of `scenario` truncated at `horizon`.
///
/// Replicate `i` draws data with `derive_seed(scenario.seed, i)` and seeds its
/// session with `derive_seed(config.seed, i)`.
pub fn monte_carlo(
    config: &AuditConfig,
    scenario: &Scenario,
    replicates: usize,
    horizon: u64,
) -> Result<MonteCarloSummary> {
    if replicates == 0 {
        return Err(AuditError::Config("replicates must be >= 1".into()));
    }
    config.validate()?;
    let scenario = scenario.clone().with_horizon(horizon)?;
    if scenario.group_count() != config.group_count {
        return Err(AuditError::Config(format!(
            "scenario has {} groups, config expects {}",
            scenario.group_count(),
            config.group_count
        )));
    }
    let outcomes = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut generator =
                StreamGenerator::new(&scenario, derive_seed(scenario.seed, i as u64))?;
            let cfg = config.clone().with_seed(derive_seed(config.seed, i as u64));
            let keep_trajectory = cfg.record_trajectory;
            let report = run_stream(cfg, &mut generator)?;
            Ok(ReplicateOutcome {
                rejected: report.decision.kind.is_rejection(),
                decision: report.decision.kind,
                tau: report
                    .decision
                    .kind
                    .is_rejection()
                    .then_some(report.decision.tau)
                    .flatten(),
                rejecting_game: report.rejecting_game,
                log_wealth_final: report.log_wealth_final,
                clamp_count: generator.clamp_count(),
                trajectory: keep_trajectory.then_some(report.trajectory),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let taus: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.tau)
        .map(|t| t as f64)
        .collect();
    let rejections = outcomes.iter().filter(|o| o.rejected).count();
    Ok(MonteCarloSummary {
        scenario: scenario.name.clone(),
        replicates,
        rejections,
        rejection_rate: rejections as f64 / replicates as f64,
        tau_mean: (!taus.is_empty()).then(|| taus.iter().sum::<f64>() / taus.len() as f64),
        tau_q10: quantile(&taus, 0.1),
        tau_q50: quantile(&taus, 0.5),
        tau_q90: quantile(&taus, 0.9),
        clamp_count: outcomes.iter().map(|o| o.clamp_count).sum(),
        outcomes,
    })
}

/// Linearly interpolated sample quantile.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub const REGIONS: [&str; 4] = ["NE", "NW", "SE", "SW"];

/// Region sampling policies in `REGIONS` order.
pub const INSURANCE_POLICIES: [[f64; 4]; 3] = [
    [0.1, 0.2, 0.3, 0.4],
    [0.05, 0.15, 0.25, 0.55],
    [0.05, 0.1, 0.15, 0.7],
];

/// Four equally sized regions with per-region risk scores whose group means
/// are 0.235 and 0.174, sampled by `pi` at every step.
pub fn insurance_population(pi: &[f64; 4]) -> Population {
    Population {
        labels: REGIONS.iter().map(|s| s.to_string()).collect(),
        rho: vec![vec![0.25; 4]; 2],
        phi: vec![vec![0.20, 0.22, 0.25, 0.27], vec![0.14, 0.16, 0.19, 0.206]],
        rho_hat: None,
        policy: vec![PolicyPhase {
            start: 1,
            pi: pi.to_vec(),
        }],
    }
}

pub fn logistic_drift(horizon: u64) -> Result<Scenario> {
    Scenario::new(
        "logistic_drift",
        ScenarioKind::LogisticDrift {
            base: 0.3,
            amplitude: 0.5,
            onset: 100,
            midpoint: 250.0,
            scale: 25.0,
        },
        horizon,
    )
}

pub fn sinusoidal_drift(horizon: u64) -> Result<Scenario> {
    Scenario::new(
        "sinusoidal_drift",
        ScenarioKind::SinusoidalDrift {
            amplitude_0: 0.1,
            period_0: 40.0,
            offset_0: 0.4,
            amplitude_1: 0.1,
            period_1: 20.0,
            offset_1: 0.4,
            slope_1: 0.001,
            noise_sd: 0.1,
        },
        horizon,
    )
}

/// A named scenario together with the payoff strategy it is meant for.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetRun {
    pub scenario: Scenario,
    pub strategy: PayoffStrategy,
}

pub const PRESETS: [&str; 4] = ["fig1", "fig2a", "fig2b", "fig5"];

/// Scenarios behind each figure-style preset. `horizon` of `None` uses the
/// preset default (1000, 2000, 500 and 20000 steps respectively).
pub fn preset(name: &str, horizon: Option<u64>) -> Result<Vec<PresetRun>> {
    let simple = |scenario| PresetRun {
        scenario,
        strategy: PayoffStrategy::Simple,
    };
    match name {
        "fig1" => [0.0, 0.1, 0.2, 0.5]
            .iter()
            .map(|&d| Scenario::mean_gap(d, horizon.unwrap_or(1000)).map(simple))
            .collect(),
        "fig2a" => Ok(vec![simple(logistic_drift(horizon.unwrap_or(2000))?)]),
        "fig2b" => Ok(vec![simple(sinusoidal_drift(horizon.unwrap_or(500))?)]),
        "fig5" => {
            let h = horizon.unwrap_or(20_000);
            let uniform = [0.25; 4];
            std::iter::once(("uniform", &uniform))
                .chain(
                    ["pi1", "pi2", "pi3"]
                        .into_iter()
                        .zip(INSURANCE_POLICIES.iter()),
                )
                .map(|(label, pi)| {
                    let pop = insurance_population(pi);
                    let strategy = PayoffStrategy::Propensity {
                        scale: pop.propensity_scale(),
                    };
                    Ok(PresetRun {
                        scenario: Scenario::new(label, ScenarioKind::PolicyPopulation(pop), h)?,
                        strategy,
                    })
                })
                .collect()
        }
        other => Err(AuditError::Config(format!(
            "unknown preset {other:?}; expected one of {}",
            PRESETS.join(", ")
        ))),
    }
}
