use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ebsp_core::report::{self, SearchRow, SummaryRow};
use ebsp_core::search::DEFAULT_NAIVE_BUDGET;
use ebsp_core::timeline::{synthetic_profiles, write_trace_to};
use ebsp_core::{
    bench, generate_trace, read_trace, simulate, train, Algorithm, BenchSpec, Millis,
    PredictorMode, QuadraticProblem, SimConfig, SimReport, StopCondition, SyncModel, TrainConfig,
    WorkerProfile,
};

/// Barrier search and synchronization-model simulation for parameter-server training.
#[derive(Parser)]
#[command(name = "ebsp", version)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output file (gen, search, bench) or directory (simulate, train). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic iteration-end trace.
    Gen(GenArgs),
    /// Run barrier search algorithms on a trace.
    Search(SearchArgs),
    /// Time the search algorithms over a grid of worker counts and horizons.
    Bench(BenchArgs),
    /// Simulate synchronization models and report waiting time and staleness.
    Simulate(SimulateArgs),
    /// Train a quadratic model under each synchronization model.
    Train(TrainArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = positive)]
    workers: u64,
    #[arg(long, value_parser = positive)]
    horizon: u64,
    #[arg(long, default_value_t = 80)]
    compute_min: Millis,
    #[arg(long, default_value_t = 240)]
    compute_max: Millis,
    #[arg(long, default_value_t = 20)]
    trans: Millis,
    /// Relative jitter bound in [0, 1).
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
}

#[derive(Args)]
struct SearchArgs {
    /// Trace CSV with columns worker,iter,end_ms.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_delimiter = ',', default_values = ["zipline", "gridscan", "full_gridscan"])]
    algorithm: Vec<Algorithm>,
    /// ZipLine, GridScan and FullGridScan.
    #[arg(long)]
    all: bool,
    /// Also run the exhaustive search.
    #[arg(long)]
    oracle: bool,
    /// Largest number of combinations the exhaustive search may visit.
    #[arg(long, default_value_t = DEFAULT_NAIVE_BUDGET)]
    budget: u128,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values = ["10", "100", "1000"])]
    workers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["15", "150"])]
    horizons: Vec<usize>,
    #[arg(long, default_value_t = 10, value_parser = positive)]
    trials: u64,
    #[arg(long, value_delimiter = ',', default_values = ["zipline", "gridscan", "full_gridscan"])]
    algorithms: Vec<Algorithm>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModelKind {
    Bsp,
    Asp,
    Ssp,
    Elastic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    Mean,
    Last,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["bsp", "asp", "ssp", "elastic"])]
    model: Vec<ModelKind>,
    /// BSP iterations per superstep.
    #[arg(long, default_value_t = 1, value_parser = positive)]
    k: u64,
    /// SSP staleness threshold.
    #[arg(long, default_value_t = 3, value_parser = positive)]
    s: u64,
    /// ElasticBSP lookahead; one run per value.
    #[arg(long = "R", value_delimiter = ',', default_values = ["15"])]
    lookahead: Vec<usize>,
    /// Intervals averaged by the ElasticBSP predictor.
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, value_enum, default_value_t = Predictor::Mean)]
    predictor: Predictor,
}

impl ModelArgs {
    fn models(&self) -> Vec<SyncModel> {
        let mode = match self.predictor {
            Predictor::Mean => PredictorMode::MeanInterval,
            Predictor::Last => PredictorMode::LastInterval,
        };
        let mut out = Vec::new();
        for kind in &self.model {
            match kind {
                ModelKind::Bsp => out.push(SyncModel::Bsp {
                    iters_per_superstep: self.k,
                }),
                ModelKind::Asp => out.push(SyncModel::Asp),
                ModelKind::Ssp => out.push(SyncModel::ssp(self.s)),
                ModelKind::Elastic => {
                    out.extend(self.lookahead.iter().map(|&lookahead| SyncModel::Elastic {
                        lookahead,
                        window: self.window,
                        mode,
                    }))
                }
            }
        }
        out
    }
}

#[derive(Args)]
struct ClusterArgs {
    /// Per-worker compute times in ms.
    #[arg(long, value_delimiter = ',', default_values = ["80", "100", "120", "200"], conflicts_with = "workers")]
    compute: Vec<Millis>,
    /// Draw this many workers with compute times uniform in [80, 240] ms instead.
    #[arg(long, value_parser = positive)]
    workers: Option<u64>,
    #[arg(long, default_value_t = 0)]
    trans: Millis,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Server cost per applied push, in ms.
    #[arg(long, default_value_t = 1)]
    server_ms: Millis,
    /// Simulated time limit.
    #[arg(long, default_value_t = 60_000, conflicts_with = "iterations")]
    duration_ms: Millis,
    /// Stop after this many iterations per worker instead of a time limit.
    #[arg(long)]
    iterations: Option<u64>,
}

impl ClusterArgs {
    fn profiles(&self, seed: u64) -> Vec<WorkerProfile> {
        match self.workers {
            Some(n) => synthetic_profiles(n as usize, 80, 240, self.trans, self.jitter, seed),
            None => self
                .compute
                .iter()
                .enumerate()
                .map(|(i, &c)| WorkerProfile::new(i + 1, c, self.trans, self.jitter))
                .collect(),
        }
    }

    fn stop(&self) -> StopCondition {
        match self.iterations {
            Some(n) => StopCondition::Iterations(n),
            None => StopCondition::Duration(self.duration_ms),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    cluster: ClusterArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shards {
    /// Each worker gets its own random shard.
    Distinct,
    /// Every worker gets an equal share of one problem.
    Replicated,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long, default_value_t = 8, value_parser = positive)]
    dim: u64,
    #[arg(long, value_enum, default_value_t = Shards::Distinct)]
    shards: Shards,
    /// Step size; defaults to 0.1 / largest eigenvalue.
    #[arg(long)]
    lr: Option<f64>,
    /// Standard deviation of Gaussian noise added to each gradient entry.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

fn positive(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(0) => Err("must be at least 1".to_string()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Stdout, or the file given by `--out`.
fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<ExitCode> {
    let profiles = synthetic_profiles(
        args.workers as usize,
        args.compute_min,
        args.compute_max,
        args.trans,
        args.jitter,
        cli.seed,
    );
    let matrix = generate_trace(&profiles, args.horizon as usize, cli.seed)?;
    write_trace_to(&matrix, output(&cli.out)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_search(cli: &Cli, args: &SearchArgs) -> Result<ExitCode> {
    let matrix =
        read_trace(&args.trace).with_context(|| format!("reading {}", args.trace.display()))?;
    let mut algorithms = if args.all {
        vec![
            Algorithm::ZipLine,
            Algorithm::GridScan,
            Algorithm::FullGridScan,
        ]
    } else {
        args.algorithm.clone()
    };
    if args.oracle && !algorithms.contains(&Algorithm::Naive) {
        algorithms.push(Algorithm::Naive);
    }
    let mut rows = Vec::new();
    for &algorithm in &algorithms {
        let result = algorithm.run(&matrix, args.budget)?;
        rows.push(SearchRow::new(algorithm, &result));
    }
    report::write_csv(output(&cli.out)?, &rows)?;

    let spread = |name: &str| {
        rows.iter()
            .find(|r| r.algorithm == name)
            .map(|r| r.spread_ms)
    };
    let chain = [
        spread("zipline"),
        spread("full_gridscan"),
        spread("gridscan"),
    ];
    let present: Vec<Millis> = chain.into_iter().flatten().collect();
    if present.windows(2).all(|w| w[0] <= w[1]) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("ordering zipline <= full_gridscan <= gridscan violated: {present:?}");
        Ok(ExitCode::from(1))
    }
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<ExitCode> {
    let spec = BenchSpec {
        workers: args.workers.clone(),
        horizons: args.horizons.clone(),
        trials: args.trials as usize,
        algorithms: args.algorithms.clone(),
        seed: cli.seed,
        naive_budget: DEFAULT_NAIVE_BUDGET,
        min_trial: Duration::from_millis(2),
    };
    let rows = bench::run_bench_with(&spec, |row| {
        eprintln!(
            "{} n={} R={}: {:.1} us",
            row.algorithm, row.n, row.horizon, row.mean_us
        );
    })?;
    report::write_csv(output(&cli.out)?, &rows)?;
    Ok(ExitCode::SUCCESS)
}

/// Checks the staleness bound each model promises; prints one line per run.
fn check_bounds(report: &SimReport) -> bool {
    let (measure, value, bound) = match report.model {
        SyncModel::Ssp { threshold } => (
            "max_observed_staleness",
            report.max_observed_staleness,
            threshold,
        ),
        SyncModel::Elastic { lookahead, .. } => (
            "max_superstep_gap",
            report.max_superstep_gap,
            lookahead as u64 - 1,
        ),
        SyncModel::Bsp {
            iters_per_superstep,
        } => (
            "max_superstep_gap",
            report.max_superstep_gap,
            iters_per_superstep - 1,
        ),
        SyncModel::Asp => return true,
    };
    let ok = value <= bound && report.staleness_violations == 0;
    eprintln!(
        "{}: {measure} {value} <= {bound}: {}",
        report.model,
        if ok { "ok" } else { "VIOLATED" }
    );
    ok
}

fn output_dir(out: &Option<PathBuf>) -> Result<Option<&Path>> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir.as_path()))
        }
        None => Ok(None),
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<ExitCode> {
    let profiles = args.cluster.profiles(cli.seed);
    let dir = output_dir(&cli.out)?;
    let mut summary = Vec::new();
    let mut ok = true;
    for model in args.models.models() {
        let config = SimConfig::new(model, args.cluster.stop())
            .server_update_ms(args.cluster.server_ms)
            .seed(cli.seed);
        let sim = simulate(&profiles, &config).with_context(|| format!("simulating {model}"))?;
        ok &= check_bounds(&sim);
        if let Some(dir) = dir {
            report::write_csv_file(
                dir.join(format!("{model}.csv")),
                &report::superstep_rows(&sim),
            )?;
        }
        summary.push(SummaryRow::from_report(&sim));
    }
    match dir {
        Some(dir) => report::write_csv_file(dir.join("summary.csv"), &summary)?,
        None => report::write_csv(io::stdout().lock(), &summary)?,
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<ExitCode> {
    let profiles = args.cluster.profiles(cli.seed);
    let n = profiles.len();
    let problem = match args.shards {
        Shards::Distinct => QuadraticProblem::random(args.dim as usize, n, cli.seed)?,
        Shards::Replicated => QuadraticProblem::replicated(args.dim as usize, n, cli.seed)?,
    };
    let dir = output_dir(&cli.out)?;
    let mut summary = Vec::new();
    let mut all_rows = Vec::new();
    for model in args.models.models() {
        let mut config = TrainConfig::new(&problem, model, args.cluster.stop())
            .noise(args.noise)
            .server_update_ms(args.cluster.server_ms)
            .seed(cli.seed);
        if let Some(lr) = args.lr {
            config = config.learning_rate(lr);
        }
        let trajectory =
            train(&problem, &config, &profiles).with_context(|| format!("training {model}"))?;
        let rows = report::loss_rows(&trajectory);
        match dir {
            Some(dir) => report::write_csv_file(dir.join(format!("{model}_loss.csv")), &rows)?,
            None => all_rows.extend(rows),
        }
        summary.push(SummaryRow::from_trajectory(&trajectory));
    }
    match dir {
        Some(dir) => report::write_csv_file(dir.join("summary.csv"), &summary)?,
        None => report::write_csv(io::stdout().lock(), &all_rows)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let Format::Csv = cli.format;
    match &cli.command {
        Command::Gen(args) => cmd_gen(cli, args),
        Command::Search(args) => cmd_search(cli, args),
        Command::Bench(args) => cmd_bench(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Train(args) => cmd_train(cli, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("ebsp").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn model_list_expands_lookaheads() {
        let cli = parse(&[
            "simulate",
            "--model",
            "bsp,elastic",
            "--k",
            "2",
            "--R",
            "15,60",
            "--predictor",
            "last",
        ]);
        let Command::Simulate(args) = cli.command else {
            panic!()
        };
        let models = args.models.models();
        assert_eq!(models.len(), 3);
        assert_eq!(
            models[0],
            SyncModel::Bsp {
                iters_per_superstep: 2
            }
        );
        assert_eq!(
            models[2],
            SyncModel::Elastic {
                lookahead: 60,
                window: 3,
                mode: PredictorMode::LastInterval
            }
        );
    }

    #[test]
    fn defaults_cover_every_model() {
        let cli = parse(&["simulate"]);
        let Command::Simulate(args) = cli.command else {
            panic!()
        };
        let names: Vec<String> = args.models.models().iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["bsp_k1", "asp", "ssp_s3", "elastic_R15"]);
        assert_eq!(args.cluster.stop(), StopCondition::Duration(60_000));
        assert_eq!(args.cluster.profiles(1).len(), 4);
    }

    #[test]
    fn stop_and_cluster_flags() {
        let cli = parse(&[
            "--seed",
            "5",
            "train",
            "--workers",
            "7",
            "--iterations",
            "40",
        ]);
        assert_eq!(cli.seed, 5);
        let Command::Train(args) = cli.command else {
            panic!()
        };
        assert_eq!(args.cluster.stop(), StopCondition::Iterations(40));
        assert_eq!(args.cluster.profiles(5).len(), 7);
        assert!(
            Cli::try_parse_from(["ebsp", "simulate", "--workers", "3", "--compute", "5,6"])
                .is_err()
        );
        assert!(Cli::try_parse_from([
            "ebsp",
            "simulate",
            "--duration-ms",
            "5",
            "--iterations",
            "6"
        ])
        .is_err());
    }

    #[test]
    fn positive_parser() {
        assert_eq!(positive("3"), Ok(3));
        assert!(positive("0").is_err());
        assert!(positive("-1").is_err());
    }
}
