//! Betting versus permutation baselines on shared replicate streams.
//!
//! Each replicate draws one null stream (equal means 0.5) and one alternative
//! stream (means `0.5 +- delta/2`), both paired, `horizon` records long. Every
//! method and level sees the same streams. The false-positive rate comes from
//! the null streams and the mean stopping time from the alternative streams,
//! counted in records and censored at the horizon.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_protocol_grid, PermutationTestConfig, ProtocolKind};
use crate::engine::run_stream;
use crate::error::{AuditError, Result};
use crate::ingest::IngestError;
use crate::seeds::derive_seed;
use crate::simulate::{Scenario, StreamGenerator};
use crate::types::{AuditConfig, AuditRecord, PayoffStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Betting,
    PermM1,
    PermM2,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Betting => "betting",
            Method::PermM1 => "perm-m1",
            Method::PermM2 => "perm-m2",
        }
    }

    fn protocol(self) -> Option<ProtocolKind> {
        match self {
            Method::Betting => None,
            Method::PermM1 => Some(ProtocolKind::M1),
            Method::PermM2 => Some(ProtocolKind::M2),
        }
    }
}

impl FromStr for Method {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "betting" => Ok(Method::Betting),
            "perm-m1" => Ok(Method::PermM1),
            "perm-m2" => Ok(Method::PermM2),
            other => Err(AuditError::Config(format!(
                "unknown method {other:?}; expected betting, perm-m1 or perm-m2"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Mean gap of the alternative scenario.
    pub delta: f64,
    /// Records per stream.
    pub horizon: usize,
    pub n_permutations: u32,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Betting, Method::PermM1, Method::PermM2],
            alphas: vec![0.01, 0.02, 0.05, 0.1],
            batch_sizes: vec![50, 100, 200, 500],
            replicates: 100,
            seed: 0,
            delta: 0.2,
            horizon: 5000,
            n_permutations: 999,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.alphas.is_empty() {
            return Err(AuditError::Config(
                "need at least one method and one alpha".into(),
            ));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(AuditError::Config(format!(
                "alpha must be in (0,1), got {a}"
            )));
        }
        if self.methods.iter().any(|m| m.protocol().is_some()) {
            if self.batch_sizes.is_empty() {
                return Err(AuditError::Config(
                    "permutation methods need batch sizes".into(),
                ));
            }
            if let Some(k) = self
                .batch_sizes
                .iter()
                .find(|k| **k < 2 || **k > self.horizon)
            {
                return Err(AuditError::Config(format!(
                    "batch size {k} must be in 2..={}",
                    self.horizon
                )));
            }
        }
        if self.replicates == 0 {
            return Err(AuditError::Config("replicates must be >= 1".into()));
        }
        if self.horizon < 2 {
            return Err(AuditError::Config("horizon must be >= 2 records".into()));
        }
        if self.n_permutations == 0 {
            return Err(AuditError::Config("n_permutations must be >= 1".into()));
        }
        Scenario::mean_gap(self.delta, 1)?;
        Ok(())
    }

    /// `(method, k)` pairs in output order; `k` is `None` for betting.
    fn cells(&self) -> Vec<(Method, Option<usize>)> {
        let mut cells = Vec::new();
        for &m in &self.methods {
            match m.protocol() {
                None => cells.push((m, None)),
                Some(_) => cells.extend(self.batch_sizes.iter().map(|&k| (m, Some(k)))),
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub k: Option<usize>,
    pub alpha: f64,
    pub fpr: f64,
    /// Rejection rate on the alternative streams.
    pub power: f64,
    /// Mean stopping time in records on the alternative, censored at the horizon.
    pub tau_mean: f64,
}

/// Per replicate and cell: (null rejected, alternative stopping time) per alpha.
type CellOutcomes = Vec<Vec<(bool, Option<u64>)>>;

fn stream(delta: f64, horizon: usize, seed: u64) -> Result<Vec<AuditRecord>> {
    let steps = horizon.div_ceil(2) as u64;
    let scenario = Scenario::mean_gap(delta, steps)?;
    let mut records: Vec<AuditRecord> = StreamGenerator::new(&scenario, seed)?.collect();
    records.truncate(horizon);
    Ok(records)
}

fn betting_tau(records: &[AuditRecord], alpha: f64, seed: u64) -> Result<Option<u64>> {
    let config = AuditConfig::new(alpha, PayoffStrategy::Simple)
        .with_seed(seed)
        .with_trajectory(false);
    let report = run_stream(config, records.iter().copied())?;
    Ok(report
        .decision
        .kind
        .is_rejection()
        .then(|| report.decision.tau.map(|t| t * 2))
        .flatten())
}

fn replicate(config: &BenchConfig, i: u64) -> Result<CellOutcomes> {
    let null = stream(0.0, config.horizon, derive_seed(config.seed, 2 * i))?;
    let alt = stream(
        config.delta,
        config.horizon,
        derive_seed(config.seed, 2 * i + 1),
    )?;
    let perm_seed = derive_seed(config.seed ^ 0x7065_726d, i);
    config
        .cells()
        .into_iter()
        .map(|(method, k)| match (method.protocol(), k) {
            (Some(kind), Some(k)) => {
                let test =
                    PermutationTestConfig::new(config.n_permutations, config.alphas[0], perm_seed)?;
                let n = run_protocol_grid(kind, k, &config.alphas, &null, &test, config.horizon)?;
                let a = run_protocol_grid(kind, k, &config.alphas, &alt, &test, config.horizon)?;
                Ok(n.iter().zip(a).map(|(n, a)| (n.rejected, a.tau)).collect())
            }
            _ => config
                .alphas
                .iter()
                .map(|&alpha| {
                    let n = betting_tau(&null, alpha, perm_seed)?.is_some();
                    Ok((n, betting_tau(&alt, alpha, perm_seed)?))
                })
                .collect(),
        })
        .collect()
}

/// Runs the benchmark; rows are ordered by method, batch size, then alpha.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let outcomes: Vec<CellOutcomes> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|i| replicate(config, i))
        .collect::<Result<_>>()?;
    let n = config.replicates as f64;
    let mut rows = Vec::new();
    for (c, (method, k)) in config.cells().into_iter().enumerate() {
        for (a, &alpha) in config.alphas.iter().enumerate() {
            let cell = outcomes.iter().map(|o| o[c][a]);
            let fpr = cell.clone().filter(|(rej, _)| *rej).count() as f64 / n;
            let power = cell.clone().filter(|(_, tau)| tau.is_some()).count() as f64 / n;
            let tau_sum: f64 = cell
                .map(|(_, tau)| tau.unwrap_or(config.horizon as u64) as f64)
                .sum();
            rows.push(BenchRow {
                method,
                k,
                alpha,
                fpr,
                power,
                tau_mean: tau_sum / n,
            });
        }
    }
    Ok(rows)
}

pub const BENCH_HEADER: [&str; 5] = ["method", "k", "alpha", "fpr", "tau_mean"];

pub fn write_bench_csv<W: Write>(
    rows: &[BenchRow],
    sink: W,
) -> std::result::Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.alpha.to_string(),
            r.fpr.to_string(),
            r.tau_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
