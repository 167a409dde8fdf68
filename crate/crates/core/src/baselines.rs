//! Fixed-time permutation test and the two batch deployment protocols used
//! as baselines:
//!
//! * `M1` tests every batch of `k` records at level `alpha` (not a valid
//!   sequential test; its false-positive rate grows with the number of batches);
//! * `M2` tests the `j`-th batch at `alpha / 2^j`, which is valid by a union bound.
//!
//! Each batch is tested on its own records only. A batch missing either group
//! is skipped and does not use up a significance level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::seeds::derive_seed;
use crate::types::AuditRecord;

/// Permuted statistics within this distance of the observed one count as ties.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestConfig {
    pub n_permutations: u32,
    pub alpha: f64,
    pub seed: u64,
}

impl PermutationTestConfig {
    pub fn new(n_permutations: u32, alpha: f64, seed: u64) -> Result<Self> {
        let config = Self {
            n_permutations,
            alpha,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_permutations == 0 {
            return Err(AuditError::Config("n_permutations must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AuditError::Config(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Number of ways to choose `k` of `n` items, or `None` once it exceeds `cap`.
fn binomial_up_to(n: usize, k: usize, cap: u64) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Number of relabelings the test evaluates for these sample sizes: every
/// split when there are at most `n_permutations`, else `n_permutations`.
pub fn permutation_count(n0: usize, n1: usize, n_permutations: u32) -> u64 {
    binomial_up_to(n0 + n1, n0, n_permutations as u64).unwrap_or(n_permutations as u64)
}

/// Two-sided permutation p-value for the absolute difference of means,
/// `(1 + #{permuted >= observed}) / (N + 1)` over `N` relabelings.
pub fn permutation_pvalue(
    sample0: &[f64],
    sample1: &[f64],
    config: &PermutationTestConfig,
) -> Result<f64> {
    config.validate()?;
    if sample0.is_empty() || sample1.is_empty() {
        return Err(AuditError::Domain(
            "permutation test needs both samples nonempty".into(),
        ));
    }
    let (n0, n1) = (sample0.len(), sample1.len());
    let pooled: Vec<f64> = sample0.iter().chain(sample1).copied().collect();
    let total: f64 = pooled.iter().sum();
    let stat = |sum0: f64| (sum0 / n0 as f64 - (total - sum0) / n1 as f64).abs();
    let observed = stat(sample0.iter().sum());
    let cutoff = observed - TIE_TOLERANCE;

    let (hits, draws) = match binomial_up_to(n0 + n1, n0, config.n_permutations as u64) {
        Some(count) => (count_exhaustive(&pooled, n0, |s| stat(s) >= cutoff), count),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut work = pooled.clone();
            let mut hits = 0u64;
            for _ in 0..config.n_permutations {
                // Partial Fisher-Yates: the first n0 slots are a uniform n0-subset.
                let mut sum0 = 0.0;
                for i in 0..n0 {
                    let j = rng.random_range(i..work.len());
                    work.swap(i, j);
                    sum0 += work[i];
                }
                if stat(sum0) >= cutoff {
                    hits += 1;
                }
            }
            (hits, config.n_permutations as u64)
        }
    };
    Ok((1 + hits) as f64 / (draws + 1) as f64)
}

/// Counts the `n0`-subsets of `pooled` whose sum satisfies `hit`.
fn count_exhaustive(pooled: &[f64], n0: usize, hit: impl Fn(f64) -> bool) -> u64 {
    let n = pooled.len();
    let mut idx: Vec<usize> = (0..n0).collect();
    let mut hits = 0;
    loop {
        if hit(idx.iter().map(|&i| pooled[i]).sum()) {
            hits += 1;
        }
        // Advance to the next combination in lexicographic order.
        let Some(pos) = (0..n0).rev().find(|&i| idx[i] != i + n - n0) else {
            return hits;
        };
        idx[pos] += 1;
        for i in pos + 1..n0 {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    M1,
    M2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchProtocol {
    pub kind: ProtocolKind,
    pub batch_size: usize,
    pub alpha: f64,
}

impl BatchProtocol {
    pub fn new(kind: ProtocolKind, batch_size: usize, alpha: f64) -> Result<Self> {
        let p = Self {
            kind,
            batch_size,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(AuditError::Config(format!(
                "batch size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AuditError::Config(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Level of the `j`-th tested batch, `j >= 1`.
    pub fn level(&self, j: u32) -> f64 {
        match self.kind {
            ProtocolKind::M1 => self.alpha,
            ProtocolKind::M2 => self.alpha / 2f64.powi(j as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub rejected: bool,
    /// Records consumed at rejection; a multiple of the batch size.
    pub tau: Option<u64>,
}

/// Runs one protocol over the first `horizon` records of `stream`.
///
/// `test_config.alpha` is ignored in favor of the per-batch levels.
pub fn run_protocol(
    protocol: &BatchProtocol,
    stream: &[AuditRecord],
    test_config: &PermutationTestConfig,
    horizon: usize,
) -> Result<ProtocolOutcome> {
    let outcomes = run_protocol_grid(
        protocol.kind,
        protocol.batch_size,
        &[protocol.alpha],
        stream,
        test_config,
        horizon,
    )?;
    Ok(outcomes[0])
}

/// Runs one protocol kind at several base levels over a shared stream,
/// computing each batch's p-value at most once.
pub fn run_protocol_grid(
    kind: ProtocolKind,
    batch_size: usize,
    alphas: &[f64],
    stream: &[AuditRecord],
    test_config: &PermutationTestConfig,
    horizon: usize,
) -> Result<Vec<ProtocolOutcome>> {
    let protocols = alphas
        .iter()
        .map(|&a| BatchProtocol::new(kind, batch_size, a))
        .collect::<Result<Vec<_>>>()?;
    test_config.validate()?;
    if horizon == 0 {
        return Err(AuditError::Config("horizon must be >= 1".into()));
    }
    let usable = horizon / batch_size * batch_size;
    if stream.len() < usable {
        return Err(AuditError::Domain(format!(
            "stream has {} records, protocol needs {usable}",
            stream.len()
        )));
    }

    let mut outcomes = vec![
        ProtocolOutcome {
            rejected: false,
            tau: None,
        };
        alphas.len()
    ];
    let mut open: Vec<bool> = vec![true; alphas.len()];
    let mut tested = 0u32;
    let (mut s0, mut s1) = (
        Vec::with_capacity(batch_size),
        Vec::with_capacity(batch_size),
    );
    for (b, batch) in stream[..usable].chunks_exact(batch_size).enumerate() {
        s0.clear();
        s1.clear();
        for r in batch {
            match r.group.index() {
                0 => s0.push(r.y_hat),
                1 => s1.push(r.y_hat),
                g => {
                    return Err(AuditError::Domain(format!(
                        "permutation baselines compare two groups, got group {g}"
                    )))
                }
            }
        }
        if s0.is_empty() || s1.is_empty() {
            continue;
        }
        tested += 1;
        // The smallest attainable p-value is 1 / (N + 1) with N <= n_permutations.
        // M2 levels only shrink, so below the global floor it can never reject.
        let global_floor = 1.0 / (test_config.n_permutations as f64 + 1.0);
        for (i, p) in protocols.iter().enumerate() {
            if open[i] && p.level(tested) < global_floor {
                open[i] = false;
            }
        }
        if !open.iter().any(|&o| o) {
            break;
        }
        let floor =
            1.0 / (permutation_count(s0.len(), s1.len(), test_config.n_permutations) + 1) as f64;
        if !protocols
            .iter()
            .zip(&open)
            .any(|(p, &o)| o && p.level(tested) >= floor)
        {
            continue;
        }
        let config = PermutationTestConfig {
            seed: derive_seed(test_config.seed, b as u64),
            ..*test_config
        };
        let pvalue = permutation_pvalue(&s0, &s1, &config)?;
        for (i, p) in protocols.iter().enumerate() {
            if open[i] && pvalue <= p.level(tested) {
                open[i] = false;
                outcomes[i] = ProtocolOutcome {
                    rejected: true,
                    tau: Some(((b + 1) * batch_size) as u64),
                };
            }
        }
        if !open.iter().any(|&o| o) {
            break;
        }
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: u32) -> PermutationTestConfig {
        PermutationTestConfig::new(n, 0.05, 1).unwrap()
    }

    /// Brute-force oracle: enumerate every assignment of labels by bitmask.
    fn brute_pvalue(s0: &[f64], s1: &[f64]) -> f64 {
        let pooled: Vec<f64> = s0.iter().chain(s1).copied().collect();
        let n = pooled.len();
        let diff = |mask: u32| {
            let (mut a, mut b) = (0.0, 0.0);
            for (i, y) in pooled.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    a += y;
                } else {
                    b += y;
                }
            }
            (a / s0.len() as f64 - b / s1.len() as f64).abs()
        };
        let observed = diff((1 << s0.len()) - 1);
        let (mut hits, mut total) = (0u32, 0u32);
        for mask in 0u32..1 << n {
            if mask.count_ones() as usize == s0.len() {
                total += 1;
                if diff(mask) >= observed - 1e-12 {
                    hits += 1;
                }
            }
        }
        (1 + hits) as f64 / (total + 1) as f64
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(permutation_pvalue(&[1.0], &[0.0], &cfg(100)).unwrap(), 1.0);
        assert_eq!(
            permutation_pvalue(&[0.3, 0.7], &[0.7, 0.3], &cfg(100)).unwrap(),
            1.0
        );
        let p = permutation_pvalue(&[1.0, 1.0], &[0.0, 0.0], &cfg(100)).unwrap();
        assert!((p - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn pvalue_errors() {
        assert!(permutation_pvalue(&[], &[0.0], &cfg(10)).is_err());
        assert!(PermutationTestConfig::new(0, 0.05, 0).is_err());
        assert!(BatchProtocol::new(ProtocolKind::M1, 1, 0.05).is_err());
    }

    #[test]
    fn binomial_cap() {
        assert_eq!(binomial_up_to(4, 2, 100), Some(6));
        assert_eq!(binomial_up_to(10, 5, 251), None);
        assert_eq!(binomial_up_to(10, 5, 252), Some(252));
        assert_eq!(permutation_count(100, 100, 999), 999);
    }

    #[test]
    fn m2_levels_halve() {
        let p = BatchProtocol::new(ProtocolKind::M2, 10, 0.05).unwrap();
        assert_eq!(
            [p.level(1), p.level(2), p.level(3)],
            [0.025, 0.0125, 0.00625]
        );
        let m1 = BatchProtocol::new(ProtocolKind::M1, 10, 0.05).unwrap();
        assert_eq!(m1.level(7), 0.05);
    }

    #[test]
    fn random_mode_is_seeded() {
        let s0: Vec<f64> = (0..30).map(|i| (i % 3) as f64 / 2.0).collect();
        let s1: Vec<f64> = (0..30).map(|i| (i % 5) as f64 / 4.0).collect();
        let a = permutation_pvalue(&s0, &s1, &cfg(500)).unwrap();
        assert_eq!(a, permutation_pvalue(&s0, &s1, &cfg(500)).unwrap());
        assert!(a > 0.0 && a <= 1.0);
        assert_eq!((a * 501.0).round(), a * 501.0);
    }

    fn record(t: u64, g: u32, y: f64) -> AuditRecord {
        AuditRecord::new(t, g, y).unwrap()
    }

    #[test]
    fn separated_stream_rejects_at_batch_boundary() {
        let stream: Vec<AuditRecord> = (1..=200)
            .map(|t| record(t, (t % 2) as u32, (t % 2 == 0) as u8 as f64))
            .collect();
        let cfg = PermutationTestConfig::new(999, 0.05, 3).unwrap();
        for kind in [ProtocolKind::M1, ProtocolKind::M2] {
            let p = BatchProtocol::new(kind, 20, 0.05).unwrap();
            let out = run_protocol(&p, &stream, &cfg, 200).unwrap();
            assert_eq!(
                out,
                ProtocolOutcome {
                    rejected: true,
                    tau: Some(20)
                }
            );
        }
    }

    #[test]
    fn single_group_batches_are_skipped() {
        // First batch only has group 0, second is perfectly separated.
        let mut stream: Vec<AuditRecord> = (1..=10).map(|t| record(t, 0, 1.0)).collect();
        stream.extend((11..=20).map(|t| record(t, (t % 2) as u32, (t % 2 == 0) as u8 as f64)));
        let cfg = PermutationTestConfig::new(999, 0.05, 3).unwrap();
        // C(10,5) = 252 splits, p = 3/253 < 0.025 = level of the first tested batch.
        let p = BatchProtocol::new(ProtocolKind::M2, 10, 0.05).unwrap();
        assert_eq!(run_protocol(&p, &stream, &cfg, 20).unwrap().tau, Some(20));
    }

    #[test]
    fn m2_stops_once_levels_are_unreachable() {
        let stream: Vec<AuditRecord> = (1..=4000).map(|t| record(t, (t % 2) as u32, 0.5)).collect();
        let cfg = PermutationTestConfig::new(99, 0.05, 3).unwrap();
        let p = BatchProtocol::new(ProtocolKind::M2, 4, 0.05).unwrap();
        let out = run_protocol(&p, &stream, &cfg, 4000).unwrap();
        assert!(!out.rejected);
        assert!(run_protocol(&p, &stream[..10], &cfg, 4000).is_err());
    }

    #[test]
    fn grid_matches_single_runs() {
        let stream: Vec<AuditRecord> = (1..=400)
            .map(|t| {
                record(
                    t,
                    (t % 2) as u32,
                    ((t * 7919) % 11) as f64 / 10.0 * if t % 2 == 0 { 0.8 } else { 1.0 },
                )
            })
            .collect();
        let cfg = PermutationTestConfig::new(199, 0.05, 9).unwrap();
        let alphas = [0.01, 0.05, 0.1, 0.2];
        for kind in [ProtocolKind::M1, ProtocolKind::M2] {
            let grid = run_protocol_grid(kind, 40, &alphas, &stream, &cfg, 400).unwrap();
            for (a, g) in alphas.iter().zip(grid) {
                let single = run_protocol(
                    &BatchProtocol::new(kind, 40, *a).unwrap(),
                    &stream,
                    &cfg,
                    400,
                )
                .unwrap();
                assert_eq!(single, g);
            }
        }
    }

    proptest! {
        #[test]
        fn exhaustive_matches_brute_force(
            s0 in prop::collection::vec(0u8..4, 1..6),
            s1 in prop::collection::vec(0u8..4, 1..6),
        ) {
            let s0: Vec<f64> = s0.into_iter().map(|v| v as f64 / 3.0).collect();
            let s1: Vec<f64> = s1.into_iter().map(|v| v as f64 / 3.0).collect();
            let p = permutation_pvalue(&s0, &s1, &cfg(10_000)).unwrap();
            prop_assert!((p - brute_pvalue(&s0, &s1)).abs() < 1e-15);
        }

        #[test]
        fn pvalue_in_unit_interval(
            s0 in prop::collection::vec(0.0f64..=1.0, 1..40),
            s1 in prop::collection::vec(0.0f64..=1.0, 1..40),
        ) {
            let p = permutation_pvalue(&s0, &s1, &cfg(99)).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
        }
    }
}
