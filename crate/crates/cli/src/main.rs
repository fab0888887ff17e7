use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use coform::experiment::{
    diversity_report, run_experiment, write_records_csv, write_report_csv, BudgetMode, ExperimentConfig,
};
use coform::generate::generate_pool;
use coform::mcts::{mcts_search, MctsConfig, RolloutPolicy};
use coform::policy::PolicyParams;
use coform::solve::{read_collectives, solve_bnb, Packing, PackingMode, WspInstance};
use coform::train::{train, TrainConfig};
use coform::{rng, Budget, Domain, Instance};

const EXIT_CONFIG: u8 = 2;
const EXIT_ORACLE_WARNING: u8 = 3;

#[derive(Parser)]
#[command(name = "coform", version, about = "Collective formation: train, generate, solve and benchmark")]
struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `count` makes runs reproducible; `wall` uses time budgets.
    #[arg(long, global = true, value_parser = ["wall", "count"])]
    budget_mode: Option<String>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes per-epoch checkpoints and a JSON-lines log.
    Train(TrainArgs),
    /// Sample a candidate pool from a trained policy.
    Gen(GenArgs),
    /// Solve weighted set packing over a pool of collectives.
    Solve(SolveArgs),
    /// Run Monte Carlo tree search directly on an instance.
    Mcts(MctsArgs),
    /// Run the optimality-ratio benchmark described by --config.
    Bench,
    /// Compare the value histograms of two models' pools.
    Diversity(DiversityArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Start from the small single-core preset instead of the full-size one.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    domain: Option<Domain>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance JSON file; generated from the flags below when absent.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value = "ridesharing")]
    domain: Domain,
    #[arg(long, default_value_t = 10)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    /// Overrides the domain's cardinality cap.
    #[arg(long)]
    max_cardinality: Option<usize>,
}

impl InstanceArgs {
    fn load(&self) -> Result<Instance> {
        let instance = match &self.instance {
            Some(path) => Instance::read_json(BufReader::new(open(path)?))?,
            None => coform::domain::generate_instance(self.domain, self.agents, self.instance_seed)?,
        };
        Ok(match self.max_cardinality {
            Some(cap) => {
                let rules = coform::DomainRules { max_cardinality: cap, ..instance.rules() };
                instance.with_rules(rules)?
            }
            None => instance,
        })
    }
}

#[derive(Args)]
struct BudgetArgs {
    /// Units of work in count mode.
    #[arg(long)]
    count: Option<u64>,
    /// Seconds in wall mode.
    #[arg(long)]
    seconds: Option<f64>,
}

impl BudgetArgs {
    fn resolve(&self, mode: BudgetMode, default_count: u64, default_seconds: f64) -> Budget {
        match mode {
            BudgetMode::Count => Budget::Count(self.count.unwrap_or(default_count)),
            BudgetMode::Wall => Budget::seconds(self.seconds.unwrap_or(default_seconds)),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct SolveArgs {
    /// JSON-lines pool, one {"members", "value"} object per line.
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    agents: usize,
    #[arg(long)]
    partition: bool,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct MctsArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value = "adapted", value_parser = ["greedy", "adapted", "random"])]
    rollout: String,
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    exploration: f64,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct DiversityArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

/// Marks failures caused by bad configuration or arguments.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<PolicyParams> {
    PolicyParams::load(path).map_err(|e| config_error(format!("cannot load checkpoint {}: {e}", path.display())))
}

impl Cli {
    fn budget_mode(&self) -> BudgetMode {
        match self.budget_mode.as_deref() {
            Some("count") => BudgetMode::Count,
            _ => BudgetMode::Wall,
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Drops timing from a packing in count mode so outputs are reproducible.
    fn stamp(&self, mut packing: Packing) -> Packing {
        if self.budget_mode() == BudgetMode::Count {
            packing.wall_ms = 0;
        }
        packing
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let is_config = err.downcast_ref::<ConfigError>().is_some()
                || matches!(
                    err.downcast_ref::<coform::Error>(),
                    Some(coform::Error::Config(_) | coform::Error::InvalidArgument(_))
                );
            ExitCode::from(if is_config { EXIT_CONFIG } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create {}", cli.out.display()))?;
    match &cli.command {
        Command::Train(args) => cmd_train(cli, args),
        Command::Gen(args) => cmd_gen(cli, args),
        Command::Solve(args) => cmd_solve(cli, args),
        Command::Mcts(args) => cmd_mcts(cli, args),
        Command::Bench => cmd_bench(cli),
        Command::Diversity(args) => cmd_diversity(cli, args),
    }
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<ExitCode> {
    let mut config: TrainConfig = match &cli.config {
        Some(path) => read_config(path)?,
        None if args.desk => {
            TrainConfig::desk(args.domain.unwrap_or(Domain::Ridesharing), args.agents.unwrap_or(10))
        }
        None => TrainConfig::default(),
    };
    if let Some(domain) = args.domain {
        config.domain = domain;
    }
    if let Some(agents) = args.agents {
        config.agents = agents;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(tau) = args.tau {
        config.tau = tau;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if cli.budget_mode() == BudgetMode::Count {
        config.record_wall_time = false;
    }
    config.validate().map_err(|e| config_error(e.to_string()))?;
    let mut resolved = create(&cli.out.join("train_config.json"))?;
    writeln!(resolved, "{}", serde_json::to_string_pretty(&config)?)?;
    resolved.flush()?;

    let outcome = train(&config, Some(&cli.out), |log| {
        info!(
            "epoch {} value {:.4} entropy {:.3} eval {:.4} baseline {:.4}{}",
            log.epoch,
            log.mean_value,
            log.mean_entropy,
            log.eval_model_value,
            log.eval_baseline_value,
            if log.baseline_swapped { " (baseline replaced)" } else { "" }
        );
    })?;
    let model_path = cli.out.join("model.ckpt");
    outcome.params.save(&model_path)?;
    println!("{}", model_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<ExitCode> {
    let params = load_model(&args.checkpoint)?;
    let instance = args.instance.load()?;
    let budget = args.budget.resolve(cli.budget_mode(), 2000, 50.0);
    let pool = generate_pool(&params, &instance, budget, &mut rng::stream(cli.seed(), &[]))?;
    let mut out = create(&cli.out.join("pool.jsonl"))?;
    pool.write_jsonl(&mut out)?;
    out.flush()?;
    let stats = pool.stats();
    info!("{} collectives from {} rollouts ({} duplicates)", pool.len(), stats.rollouts, stats.duplicates);
    println!("{}", cli.out.join("pool.jsonl").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(cli: &Cli, args: &SolveArgs) -> Result<ExitCode> {
    let collectives = read_collectives(BufReader::new(open(&args.pool)?))?;
    let mode = if args.partition { PackingMode::Partition } else { PackingMode::Packing };
    let wsp = WspInstance::from_collectives(args.agents, &collectives, mode)?;
    let budget = args.budget.resolve(cli.budget_mode(), 1_000_000, 10.0);
    let packing = cli.stamp(solve_bnb(&wsp, budget)?.packing);
    write_packing(cli, &packing)
}

fn write_packing(cli: &Cli, packing: &Packing) -> Result<ExitCode> {
    let json = packing.to_json();
    let path = cli.out.join("packing.json");
    fs::write(&path, format!("{json}\n")).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_mcts(cli: &Cli, args: &MctsArgs) -> Result<ExitCode> {
    let instance = args.instance.load()?;
    let rollout = match args.rollout.as_str() {
        "greedy" => RolloutPolicy::Greedy,
        "random" => RolloutPolicy::Random,
        _ => RolloutPolicy::Adapted,
    };
    let budget = args.budget.resolve(cli.budget_mode(), 2000, 60.0);
    let config = MctsConfig { exploration: args.exploration, rollout, budget, seed: cli.seed() };
    let outcome = mcts_search(&instance, config)?;
    info!("{} iterations, {} tree nodes, {} dead ends", outcome.iterations, outcome.tree_nodes, outcome.dead_ends);
    match outcome.packing {
        Some(packing) => write_packing(cli, &cli.stamp(packing)),
        None => anyhow::bail!("{} found no feasible packing", rollout.method_name()),
    }
}

fn cmd_bench(cli: &Cli) -> Result<ExitCode> {
    let path = cli.config.as_ref().ok_or_else(|| config_error("bench needs --config"))?;
    let mut config: ExperimentConfig = read_config(path)?;
    if let Some(seed) = cli.seed {
        config.instance_seed_base = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if cli.budget_mode.is_some() {
        config.budget_mode = cli.budget_mode();
    }
    let report = run_experiment(&config)?;
    let mut runs = create(&cli.out.join("runs.csv"))?;
    write_records_csv(&mut runs, &config, &report.records)?;
    runs.flush()?;
    let mut table = create(&cli.out.join("report.csv"))?;
    write_report_csv(&mut table, &report.rows)?;
    table.flush()?;
    println!("{:<8} {:>5} {:>10} {:>8}  reference", "method", "n", "ratio", "std");
    for row in &report.rows {
        println!("{:<8} {:>5} {:>10.4} {:>8.4}  {:?}", row.method, row.n, row.mean_ratio, row.std_dev, row.reference);
    }
    if report.warnings.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        Ok(ExitCode::from(EXIT_ORACLE_WARNING))
    }
}

fn cmd_diversity(cli: &Cli, args: &DiversityArgs) -> Result<ExitCode> {
    let model_a = load_model(&args.model_a)?;
    let model_b = load_model(&args.model_b)?;
    let instance = args.instance.load()?;
    let budget = args.budget.resolve(cli.budget_mode(), 2000, 50.0);
    let report = diversity_report(&model_a, &model_b, &instance, budget, cli.seed(), args.bins)?;
    let mut out = create(&cli.out.join("diversity.csv"))?;
    report.write_csv(&mut out)?;
    out.flush()?;
    println!("distinct collectives: a = {}, b = {}", report.distinct_a, report.distinct_b);
    Ok(ExitCode::SUCCESS)
}
