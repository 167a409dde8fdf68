//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits nonzero if any criterion fails.
//!
//! Run a subset by passing criterion numbers:
//! `cargo test --test acceptance -- 3 12`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqfair::bench::{run_bench, BenchConfig, Method};
use seqfair::betting::{log_wealth_lower_bound, BettorState};
use seqfair::payoffs::{
    payoff_composite, payoff_propensity, payoff_simple, BatchAccumulator, PropensityContext,
};
use seqfair::simulate::{
    insurance_population, logistic_drift, monte_carlo, Arrivals, Scenario, ScenarioKind,
    StreamGenerator, INSURANCE_POLICIES,
};
use seqfair::types::WealthState;
use seqfair::{AuditConfig, AuditRecord, AuditSession, DecisionKind, PayoffStrategy};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Two binomial standard errors of a rejection rate at level `alpha`.
fn slack(alpha: f64, n: usize) -> f64 {
    2.0 * (alpha * (1.0 - alpha) / n as f64).sqrt()
}

fn simple(alpha: f64, seed: u64) -> AuditConfig {
    AuditConfig::new(alpha, PayoffStrategy::Simple)
        .with_seed(seed)
        .with_trajectory(false)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let log_tolerance = (1.0 - 1e-9f64).ln();
    let (mut bad_sequences, mut bad_steps, mut steps) = (0, 0u64, 0u64);
    let mut max_bad_v = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10_000);
        let drift: f64 = rng.random_range(-0.5..0.5);
        let mut bettor = BettorState::default();
        let mut wealth = WealthState::new(false);
        let mut bad = false;
        for _ in 0..n {
            let g: f64 = (rng.random_range(-1.0f64..=1.0) + drift).clamp(-1.0, 1.0);
            wealth.apply(1.0 + bettor.lambda * g, g).unwrap();
            bettor = bettor.update(g).unwrap();
            steps += 1;
            if wealth.v_sum > 0.0 {
                let bound = log_wealth_lower_bound(wealth.s_sum, wealth.v_sum).unwrap();
                if wealth.log_wealth < bound + log_tolerance {
                    bad = true;
                    bad_steps += 1;
                    max_bad_v = max_bad_v.max(wealth.v_sum);
                }
            }
        }
        bad_sequences += bad as usize;
    }
    outcome(
        bad_sequences == 0,
        format!(
            "bound violated in {bad_sequences}/1000 sequences ({bad_steps} of {steps} steps); \
             largest V at a violation {max_bad_v:.3}. At t = 1 the bet is 0, so K_1 = 1 < 1/g_1^2 <= bound"
        ),
    )
}

fn criterion_2() -> Outcome {
    let lambdas: Vec<f64> = (0..=10).map(|i| -0.5 + 0.1 * i as f64).collect();
    let bern = |mu: f64, y: f64| if y == 1.0 { mu } else { 1.0 - mu };
    let mut worst = 0.0f64;

    for mu in (1..=9).map(|i| i as f64 / 10.0) {
        for &l in &lambdas {
            let mut e = 0.0;
            for y0 in [0.0, 1.0] {
                for y1 in [0.0, 1.0] {
                    e += bern(mu, y0) * bern(mu, y1) * payoff_simple(y0, y1, l).unwrap().value;
                }
            }
            worst = worst.max((e - 1.0).abs());
        }
    }

    // Three-point population with equal group means 0.44.
    let rho = [[0.2, 0.5, 0.3], [0.4, 0.4, 0.2]];
    let phi = [[0.9, 0.4, 0.2], [0.5, 0.3, 0.6]];
    let pi = [[0.5, 0.25, 0.25], [0.2, 0.3, 0.5]];
    let scale = 0.25;
    for &l in &lambdas {
        let mut e = 0.0;
        for x0 in 0..3 {
            for x1 in 0..3 {
                let ctx =
                    PropensityContext::new(rho[0][x0] / pi[0][x0], rho[1][x1] / pi[1][x1], scale)
                        .unwrap();
                e += pi[0][x0]
                    * pi[1][x1]
                    * payoff_propensity(phi[0][x0], phi[1][x1], &ctx, l)
                        .unwrap()
                        .value;
            }
        }
        worst = worst.max((e - 1.0).abs());
    }

    let eps = 0.1;
    for mu1 in (1..=8).map(|i| i as f64 / 10.0) {
        let mu0 = mu1 + eps;
        for &l in &lambdas {
            let mut e = 0.0;
            for y0 in [0.0, 1.0] {
                for y1 in [0.0, 1.0] {
                    e += bern(mu0, y0)
                        * bern(mu1, y1)
                        * payoff_composite(y0, y1, eps, l, 0.0).unwrap().q.value;
                }
            }
            worst = worst.max((e - 1.0).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("largest |E[payoff] - 1| = {worst:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for randomized in [false, true] {
        for alpha in [0.05, 0.01] {
            let config = simple(alpha, 31).with_randomized_final_step(randomized);
            let scenario = Scenario::mean_gap(0.0, 2000).unwrap().with_seed(30);
            let s = monte_carlo(&config, &scenario, 500, 2000).unwrap();
            let limit = alpha + slack(alpha, 500);
            pass &= s.rejection_rate <= limit;
            parts.push(format!(
                "alpha={alpha}{}: {:.3} <= {limit:.3}",
                if randomized { " randomized" } else { "" },
                s.rejection_rate
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let alpha = 0.05;
    let mut pass = true;
    let mut taus = Vec::new();
    let mut ratios = Vec::new();
    let mut parts = Vec::new();
    for delta in [0.1, 0.2, 0.4] {
        let scenario = Scenario::mean_gap(delta, 20_000).unwrap().with_seed(40);
        let s = monte_carlo(&simple(alpha, 41), &scenario, 200, 20_000).unwrap();
        let tau = s.tau_mean.unwrap_or(f64::INFINITY);
        let d2 = delta * delta;
        let ratio = tau * d2 / (1.0 / (d2 * alpha)).ln();
        pass &= s.rejection_rate >= 0.99;
        parts.push(format!(
            "delta={delta}: power {:.3}, mean tau {tau:.1}, ratio {ratio:.3}",
            s.rejection_rate
        ));
        taus.push(tau);
        ratios.push(ratio);
    }
    let decreasing = taus.windows(2).all(|w| w[1] < w[0]);
    let spread = ratios.iter().cloned().fold(f64::MIN, f64::max)
        / ratios.iter().cloned().fold(f64::MAX, f64::min);
    pass &= decreasing && spread < 10.0;
    parts.push(format!(
        "tau decreasing: {decreasing}; ratio spread {spread:.2}x"
    ));
    outcome(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let alpha = 0.01;
    let null = Scenario::mean_gap(0.0, 1000).unwrap().with_seed(50);
    let s0 = monte_carlo(&simple(alpha, 51), &null, 100, 1000).unwrap();
    let below = 1.0 - s0.rejection_rate;
    let alt = Scenario::mean_gap(0.5, 1000).unwrap().with_seed(52);
    let s5 = monte_carlo(&simple(alpha, 53), &alt, 100, 1000).unwrap();
    let median = s5.tau_q50.unwrap_or(f64::INFINITY);
    outcome(
        below >= 0.95 && s5.rejection_rate == 1.0 && (20.0..=300.0).contains(&median),
        format!(
            "delta=0: {:.0}% of runs stay below 1/alpha over 1000 steps; delta=0.5: power {:.2}, median tau {median}",
            100.0 * below,
            s5.rejection_rate
        ),
    )
}

fn criterion_6() -> Outcome {
    let alpha = 0.05;
    let horizon = 20_000;
    let run = |pi: &[f64; 4], equalize: bool, reps: usize, seed: u64| {
        let mut pop = insurance_population(pi);
        if equalize {
            pop = pop.equalized().unwrap();
        }
        let strategy = PayoffStrategy::Propensity {
            scale: pop.propensity_scale(),
        };
        let scenario = Scenario::new("pop", ScenarioKind::PolicyPopulation(pop), horizon)
            .unwrap()
            .with_seed(seed);
        let config = AuditConfig::new(alpha, strategy)
            .with_seed(seed + 1)
            .with_trajectory(false);
        monte_carlo(&config, &scenario, reps, horizon).unwrap()
    };
    let pi3 = &INSURANCE_POLICIES[2];
    let fpr = run(pi3, true, 500, 60).rejection_rate;
    let alt = run(pi3, false, 200, 62);
    let uniform = run(&[0.25; 4], false, 200, 64);
    let (tau3, tau_u) = (
        alt.tau_mean.unwrap_or(f64::INFINITY),
        uniform.tau_mean.unwrap_or(0.0),
    );
    let limit = alpha + slack(alpha, 500);
    outcome(
        fpr <= limit && alt.rejection_rate >= 0.95 && tau3 >= tau_u,
        format!(
            "equalized FPR {fpr:.3} <= {limit:.3}; power {:.3}; mean tau pi3 {tau3:.1} vs uniform {tau_u:.1}",
            alt.rejection_rate
        ),
    )
}

fn criterion_7() -> Outcome {
    let scenario = logistic_drift(2000).unwrap().with_seed(70);
    let s = monte_carlo(&simple(0.01, 71), &scenario, 100, 2000).unwrap();
    let min_tau = s.outcomes.iter().filter_map(|o| o.tau).min().unwrap_or(0);
    outcome(
        s.rejection_rate >= 0.95 && min_tau > 100,
        format!("power {:.2} by t=2000; min tau {min_tau}", s.rejection_rate),
    )
}

fn criterion_8() -> Outcome {
    let alpha = 0.05;
    let config = AuditConfig::new(alpha, PayoffStrategy::Composite { epsilon: 0.1 })
        .with_seed(81)
        .with_trajectory(false);
    let mut pass = true;
    let mut parts = Vec::new();
    let limit = alpha + slack(alpha, 500);
    for means in [vec![0.55, 0.45], vec![0.45, 0.55]] {
        let scenario = Scenario::new(
            "boundary",
            ScenarioKind::FixedMeans {
                means: means.clone(),
            },
            2000,
        )
        .unwrap()
        .with_seed(80);
        let fpr = monte_carlo(&config, &scenario, 500, 2000)
            .unwrap()
            .rejection_rate;
        pass &= fpr <= limit;
        parts.push(format!("boundary {means:?}: FPR {fpr:.3} <= {limit:.3}"));
    }
    let alt = Scenario::mean_gap(0.3, 20_000).unwrap().with_seed(82);
    let power = monte_carlo(&config, &alt, 200, 20_000)
        .unwrap()
        .rejection_rate;
    pass &= power >= 0.99;
    parts.push(format!("delta=0.3: power {power:.3}"));
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let alpha = 0.05;
    let config = simple(alpha, 91).with_groups(3);
    let null = Scenario::new(
        "equal",
        ScenarioKind::FixedMeans {
            means: vec![0.5; 3],
        },
        2000,
    )
    .unwrap()
    .with_seed(90);
    let fpr = monte_carlo(&config, &null, 500, 2000)
        .unwrap()
        .rejection_rate;
    let alt = Scenario::new(
        "alt",
        ScenarioKind::FixedMeans {
            means: vec![0.5, 0.5, 0.8],
        },
        20_000,
    )
    .unwrap()
    .with_seed(92);
    let s = monte_carlo(&config, &alt, 200, 20_000).unwrap();
    let pair12 = s
        .outcomes
        .iter()
        .filter(|o| o.rejecting_game.as_deref() == Some("1-2"))
        .count();
    let share = pair12 as f64 / s.rejections.max(1) as f64;
    let limit = alpha + slack(alpha, 500);
    outcome(
        fpr <= limit && s.rejection_rate >= 0.99 && share >= 0.95,
        format!(
            "equal FPR {fpr:.3} <= {limit:.3}; power {:.3}; pair 1-2 rejected in {:.1}% of rejections",
            s.rejection_rate,
            100.0 * share
        ),
    )
}

fn criterion_10() -> Outcome {
    // Dense stream: both sides have exactly one pending output at every bet.
    let scenario = Scenario::mean_gap(0.2, 5000).unwrap();
    let records: Vec<AuditRecord> = StreamGenerator::new(&scenario, 100).unwrap().collect();
    let (mut simple_bettor, mut batch_bettor) = (BettorState::default(), BettorState::default());
    let mut acc = BatchAccumulator::new();
    let mut identical = true;
    for pair in records.chunks_exact(2) {
        let a = payoff_simple(pair[0].y_hat, pair[1].y_hat, simple_bettor.lambda).unwrap();
        acc.push(&pair[0]).unwrap();
        acc.push(&pair[1]).unwrap();
        let b = acc.payoff(batch_bettor.lambda).unwrap();
        identical &= a.value.to_bits() == b.value.to_bits() && a.g.to_bits() == b.g.to_bits();
        simple_bettor = simple_bettor.update(a.g).unwrap();
        batch_bettor = batch_bettor.update(b.g).unwrap();
        identical &= simple_bettor.lambda.to_bits() == batch_bettor.lambda.to_bits();
    }
    let mut b =
        AuditSession::new(AuditConfig::new(1e-9, PayoffStrategy::Batched).with_trajectory(false))
            .unwrap();
    let mut s_session =
        AuditSession::new(AuditConfig::new(1e-9, PayoffStrategy::Simple).with_trajectory(false))
            .unwrap();
    for pair in records.chunks_exact(2).take(300) {
        s_session.step(pair).unwrap();
        b.step(&pair[..1]).unwrap();
        b.step(&pair[1..]).unwrap();
    }
    identical &= s_session.log_wealth().to_bits() == b.log_wealth().to_bits();

    let alternating = Scenario::mean_gap(0.4, 40_000)
        .unwrap()
        .with_arrivals(Arrivals::Alternating)
        .unwrap()
        .with_seed(101);
    let config = AuditConfig::new(0.05, PayoffStrategy::Batched)
        .with_seed(102)
        .with_trajectory(false);
    let power = monte_carlo(&config, &alternating, 200, 40_000)
        .unwrap()
        .rejection_rate;
    outcome(
        identical && power >= 0.99,
        format!("dense batch payoffs bit-identical to simple: {identical}; alternating delta=0.4 power {power:.3}"),
    )
}

fn criterion_11() -> Outcome {
    let config = BenchConfig {
        methods: vec![Method::Betting, Method::PermM1, Method::PermM2],
        alphas: vec![0.01, 0.02, 0.05, 0.1],
        batch_sizes: vec![50, 100, 200, 500],
        replicates: 200,
        seed: 110,
        delta: 0.2,
        horizon: 5000,
        n_permutations: 999,
    };
    let rows = run_bench(&config).unwrap();
    let find = |m: Method, k: Option<usize>, a: f64| {
        rows.iter()
            .find(|r| r.method == m && r.k == k && r.alpha == a)
            .unwrap()
    };
    let m1 = find(Method::PermM1, Some(100), 0.05).fpr;
    let m2 = find(Method::PermM2, Some(100), 0.05).fpr;
    let limit = 0.05 + slack(0.05, 200);
    let mut pass = m1 > 0.1 && m2 <= limit;
    let mut worst_margin = f64::INFINITY;
    for &alpha in &config.alphas {
        let bet = find(Method::Betting, None, alpha);
        pass &= bet.fpr <= alpha + slack(alpha, 200);
        for &k in &config.batch_sizes {
            let perm = find(Method::PermM2, Some(k), alpha);
            worst_margin = worst_margin.min(perm.tau_mean - bet.tau_mean);
            pass &= bet.tau_mean <= perm.tau_mean;
        }
    }
    outcome(
        pass,
        format!(
            "M1 FPR (k=100, alpha=0.05) {m1:.3} > 0.1; M2 FPR {m2:.3} <= {limit:.3}; \
             smallest M2 minus betting mean tau over the grid {worst_margin:.1} records"
        ),
    )
}

fn criterion_12() -> Outcome {
    // alpha = 0.5 on a fresh session: K = 1 = 0.5 / alpha, threshold 2.
    let n = 10_000;
    let mut rejects = 0;
    let mut refused = true;
    for seed in 0..n {
        let config = AuditConfig::new(0.5, PayoffStrategy::Simple)
            .with_seed(seed)
            .with_randomized_final_step(true);
        let mut session = AuditSession::new(config).unwrap();
        assert_eq!(session.wealth(), 1.0);
        let report = session.finalize().unwrap();
        rejects += (report.decision.kind == DecisionKind::FinalRandomizedReject) as usize;
        refused &= session.finalize().is_err();
    }
    let freq = rejects as f64 / n as f64;
    outcome(
        (freq - 0.5).abs() <= 0.02 && refused,
        format!("reject frequency {freq:.4}; second finalize refused: {refused}"),
    )
}

fn examples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples")
}

/// Runs the binary and returns (exit code, stdout, bytes of `--out`-style file if any).
fn run_cli(args: &[&str], out_file: Option<&Path>) -> (i32, Vec<u8>, Vec<u8>) {
    let output = Command::new(env!("CARGO_BIN_EXE_seqfair"))
        .args(args)
        .current_dir(examples_dir())
        .output()
        .expect("run seqfair");
    let file = out_file
        .map(|p| std::fs::read(p).unwrap_or_default())
        .unwrap_or_default();
    (output.status.code().unwrap_or(-1), output.stdout, file)
}

/// (stdout golden, arguments, side file, side file golden, exit code).
type Case<'a> = (&'a str, Vec<&'a str>, Option<&'a Path>, &'a str, i32);

fn criterion_13() -> Outcome {
    let dir = examples_dir();
    let tmp = tempfile::tempdir().unwrap();
    let traj = tmp.path().join("trajectory.csv");
    let traj_s = traj.to_str().unwrap();
    let golden = |name: &str| std::fs::read(dir.join(name)).unwrap_or_default();
    let cases: Vec<Case> = vec![
        (
            "shift.report.json",
            vec![
                "audit",
                "shift.jsonl",
                "--alpha",
                "0.05",
                "--trajectory-out",
                traj_s,
            ],
            Some(traj.as_path()),
            "shift.trajectory.csv",
            1,
        ),
        (
            "fair.report.json",
            vec![
                "audit",
                "fair.csv",
                "--alpha",
                "0.05",
                "--randomized-final",
                "--seed",
                "11",
            ],
            None,
            "",
            0,
        ),
        (
            "simulate_fig1.csv",
            vec![
                "simulate",
                "fig1",
                "--replicates",
                "20",
                "--alpha",
                "0.01",
                "--seed",
                "7",
            ],
            None,
            "",
            0,
        ),
        (
            "bench.csv",
            vec![
                "bench",
                "--replicates",
                "10",
                "--alphas",
                "0.05,0.1",
                "--batch-sizes",
                "50,100",
                "--horizon",
                "1000",
                "--permutations",
                "199",
                "--seed",
                "3",
            ],
            None,
            "",
            0,
        ),
    ];
    let mut failures = Vec::new();
    for (stdout_golden, args, file, file_golden, code) in &cases {
        let first = run_cli(args, *file);
        let second = run_cli(args, *file);
        if first != second {
            failures.push(format!("{} not deterministic", args[0]));
        }
        if first.0 != *code {
            failures.push(format!("{stdout_golden}: exit {} != {code}", first.0));
        }
        if first.1 != golden(stdout_golden) {
            failures.push(format!("{stdout_golden} differs from golden"));
        }
        if file.is_some() && first.2 != golden(file_golden) {
            failures.push(format!("{file_golden} differs from golden"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} commands reproduced byte-identically and match docs/examples",
                cases.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 13] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
        (13, criterion_13),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (n, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n}: {status} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
