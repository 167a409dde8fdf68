use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqfair::bench::{run_bench, write_bench_csv, BenchConfig, Method};
use seqfair::ingest::{
    emit_report, parse_stream, write_summary_csv, write_trajectory_csv, Format, Mode, SummaryRow,
};
use seqfair::simulate::{monte_carlo, preset, PresetRun, Scenario, ScenarioKind};
use seqfair::{AuditConfig, PayoffStrategy, StreamAuditor};

#[derive(Parser)]
#[command(
    name = "seqfair",
    version,
    about = "Sequential fairness auditing by betting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit a record file. Exit status 0: no rejection, 1: rejected, 2: error.
    Audit(AuditArgs),
    /// Monte Carlo summaries for a preset or a scenario file.
    Simulate(SimulateArgs),
    /// False-positive rate and stopping time of betting versus permutation baselines.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum StrategyArg {
    Simple,
    Batched,
    Propensity,
    EstimatedDensity,
    Composite,
}

#[derive(Args, Clone)]
struct StrategyArgs {
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Composite null tolerance.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Propensity scale L or estimated-density scale B.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    delta_min: Option<f64>,
    #[arg(long)]
    delta_max: Option<f64>,
}

#[derive(Args)]
struct AuditArgs {
    input: PathBuf,
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Skip malformed lines and unknown keys with a warning.
    #[arg(long)]
    lenient: bool,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    alpha: f64,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..))]
    groups: u32,
    /// Run the randomized terminal check if the stream ends without rejection.
    #[arg(long)]
    randomized_final: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the wealth trajectory as CSV; also includes it in the report.
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name (fig1, fig2a, fig2b, fig5) or path to a JSON scenario.
    scenario: String,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    replicates: u64,
    /// Time steps per replicate; defaults to the scenario's own horizon.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    horizon: Option<u64>,
    #[arg(long, default_value = "0.05", value_delimiter = ',', value_parser = parse_alpha)]
    alpha: Vec<f64>,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long)]
    randomized_final: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "0.01,0.02,0.05,0.1", value_delimiter = ',', value_parser = parse_alpha)]
    alphas: Vec<f64>,
    #[arg(long, default_value = "betting,perm-m1,perm-m2", value_delimiter = ',')]
    methods: Vec<Method>,
    #[arg(long, default_value = "50,100,200,500", value_delimiter = ',')]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    replicates: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mean gap of the alternative scenario.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Records per stream.
    #[arg(long, default_value_t = 5000)]
    horizon: usize,
    #[arg(long, default_value_t = 999)]
    permutations: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must be in (0,1), got {a}"))
    }
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse(), &mut io::stdout().lock()) {
        Ok(false) => ExitCode::from(0),
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether an audit rejected.
fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<bool> {
    match cli.command {
        Command::Audit(args) => audit(args, stdout),
        Command::Simulate(args) => simulate(args, stdout).map(|()| false),
        Command::Bench(args) => bench(args, stdout).map(|()| false),
    }
}

fn strategy_for(args: &StrategyArgs, kind: StrategyArg) -> CliResult<PayoffStrategy> {
    let need =
        |v: Option<f64>, flag: &str| v.ok_or_else(|| format!("--strategy requires --{flag}"));
    let strategy = match kind {
        StrategyArg::Simple => PayoffStrategy::Simple,
        StrategyArg::Batched => PayoffStrategy::Batched,
        StrategyArg::Propensity => PayoffStrategy::Propensity {
            scale: need(args.scale, "scale")?,
        },
        StrategyArg::EstimatedDensity => PayoffStrategy::EstimatedDensity {
            delta_min: need(args.delta_min, "delta-min")?,
            delta_max: need(args.delta_max, "delta-max")?,
            scale: need(args.scale, "scale")?,
        },
        StrategyArg::Composite => PayoffStrategy::Composite {
            epsilon: need(args.epsilon, "epsilon")?,
        },
    };
    strategy.validate()?;
    Ok(strategy)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("cannot create {}: {e}", path.display()).into())
}

fn output<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> CliResult<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(stdout),
    })
}

fn audit(args: AuditArgs, stdout: &mut dyn Write) -> CliResult<bool> {
    let strategy = strategy_for(
        &args.strategy,
        args.strategy.strategy.unwrap_or(StrategyArg::Simple),
    )?;
    let config = AuditConfig::new(args.alpha, strategy)
        .with_groups(args.groups as usize)
        .with_seed(args.seed)
        .with_randomized_final_step(args.randomized_final)
        .with_trajectory(args.trajectory_out.is_some());
    let file = File::open(&args.input)
        .map_err(|e| format!("cannot open {}: {e}", args.input.display()))?;
    let format = match args.format {
        Some(FormatArg::Jsonl) => Format::Jsonl,
        Some(FormatArg::Csv) => Format::Csv,
        None => Format::from_path(&args.input),
    };
    let mode = if args.lenient {
        Mode::Lenient
    } else {
        Mode::Strict
    };

    let mut auditor = StreamAuditor::new(config)?;
    for record in parse_stream(BufReader::new(file), format, mode) {
        if auditor.push(record?)?.kind.is_terminal() {
            break;
        }
    }
    let report = auditor.finish()?;
    if let Some(path) = &args.trajectory_out {
        write_trajectory_csv(&report, create(path)?)?;
    }
    emit_report(&report, stdout)?;
    Ok(report.decision.kind.is_rejection())
}

fn load_scenario(name: &str, horizon: Option<u64>) -> CliResult<Vec<PresetRun>> {
    let path = Path::new(name);
    if !path.exists() {
        return Ok(preset(name, horizon)?);
    }
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {name}: {e}"))?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| format!("invalid scenario {name}: {e}"))?;
    if let Some(h) = horizon {
        scenario.horizon = h;
    }
    scenario.validate()?;
    let strategy = match &scenario.kind {
        ScenarioKind::PolicyPopulation(pop) => PayoffStrategy::Propensity {
            scale: pop.propensity_scale(),
        },
        _ => PayoffStrategy::Simple,
    };
    Ok(vec![PresetRun { scenario, strategy }])
}

fn strategy_for_run(args: &StrategyArgs, run: &PresetRun) -> CliResult<PayoffStrategy> {
    let population = match &run.scenario.kind {
        ScenarioKind::PolicyPopulation(pop) => Some(pop),
        _ => None,
    };
    match (args.strategy, population) {
        (None, _) => Ok(run.strategy),
        (Some(StrategyArg::Propensity), Some(pop)) if args.scale.is_none() => {
            Ok(PayoffStrategy::Propensity {
                scale: pop.propensity_scale(),
            })
        }
        (Some(StrategyArg::EstimatedDensity), Some(pop)) if args.scale.is_none() => {
            Ok(pop.estimated_density_strategy()?)
        }
        (Some(kind), _) => strategy_for(args, kind),
    }
}

fn simulate(args: SimulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let runs = load_scenario(&args.scenario, args.horizon)?;
    let mut rows = Vec::new();
    for run in &runs {
        let strategy = strategy_for_run(&args.strategy, run)?;
        let scenario = run.scenario.clone().with_seed(args.seed);
        for &alpha in &args.alpha {
            let config = AuditConfig::new(alpha, strategy)
                .with_groups(scenario.group_count())
                .with_seed(args.seed)
                .with_randomized_final_step(args.randomized_final)
                .with_trajectory(false);
            let summary = monte_carlo(
                &config,
                &scenario,
                args.replicates as usize,
                scenario.horizon,
            )?;
            if summary.clamp_count > 0 {
                log::warn!(
                    "{}: {} noisy Bernoulli parameters were clamped to [0,1]",
                    scenario.name,
                    summary.clamp_count
                );
            }
            rows.push(SummaryRow {
                scenario: scenario.name.clone(),
                alpha,
                strategy: strategy.name().to_string(),
                summary,
            });
        }
    }
    write_summary_csv(&rows, output(&args.out, stdout)?)?;
    Ok(())
}

fn bench(args: BenchArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let config = BenchConfig {
        methods: args.methods,
        alphas: args.alphas,
        batch_sizes: args.batch_sizes,
        replicates: args.replicates as usize,
        seed: args.seed,
        delta: args.delta,
        horizon: args.horizon,
        n_permutations: args.permutations,
    };
    let rows = run_bench(&config)?;
    write_bench_csv(&rows, output(&args.out, stdout)?)?;
    Ok(())
}
