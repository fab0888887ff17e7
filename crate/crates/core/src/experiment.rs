//! Benchmark harness: runs methods on seeded synthetic instances and reports
//! optimality ratios against an exact or best-known reference.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::domain::{enumerate_feasible, feasible_count, generate_instance, Domain, Instance, DEFAULT_ENUMERATION_LIMIT};
use crate::error::{Error, Result};
use crate::generate::{bin_edges, generate_pool, histogram, CandidatePool};
use crate::mcts::{mcts_search, MctsConfig, RolloutPolicy};
use crate::policy::PolicyParams;
use crate::rng;
use crate::solve::{solve_bnb, solve_bruteforce, PackingMode, WspInstance, DEFAULT_BRUTEFORCE_AGENTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "AM")]
    Am,
    #[serde(rename = "G-MCTS")]
    GreedyMcts,
    #[serde(rename = "A-MCTS")]
    AdaptedMcts,
    #[serde(rename = "R-MCTS")]
    RandomMcts,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Am, Method::GreedyMcts, Method::AdaptedMcts, Method::RandomMcts];

    pub fn name(self) -> &'static str {
        match self {
            Method::Am => "AM",
            Method::GreedyMcts => RolloutPolicy::Greedy.method_name(),
            Method::AdaptedMcts => RolloutPolicy::Adapted.method_name(),
            Method::RandomMcts => RolloutPolicy::Random.method_name(),
        }
    }

    fn rollout_policy(self) -> Option<RolloutPolicy> {
        match self {
            Method::Am => None,
            Method::GreedyMcts => Some(RolloutPolicy::Greedy),
            Method::AdaptedMcts => Some(RolloutPolicy::Adapted),
            Method::RandomMcts => Some(RolloutPolicy::Random),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    Wall,
    Count,
}

impl FromStr for BudgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<BudgetMode> {
        match s {
            "wall" => Ok(BudgetMode::Wall),
            "count" => Ok(BudgetMode::Count),
            _ => Err(Error::Config(format!("budget mode must be wall or count, got {s:?}"))),
        }
    }
}

/// Work limits used in count mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountBudget {
    pub generation_rollouts: u64,
    pub solver_nodes: u64,
    pub mcts_iterations: u64,
}

impl Default for CountBudget {
    fn default() -> Self {
        CountBudget { generation_rollouts: 2000, solver_nodes: 1_000_000, mcts_iterations: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub sizes: Vec<usize>,
    pub instances_per_size: usize,
    pub seeds_per_instance: usize,
    /// Instance `k` of every size uses seed `instance_seed_base + k`.
    pub instance_seed_base: u64,
    pub budget_mode: BudgetMode,
    /// Per-run time budget in wall mode.
    pub total_seconds: f64,
    /// Fraction of the time budget spent generating the candidate pool.
    pub split_k: f64,
    pub count_budget: CountBudget,
    pub methods: Vec<Method>,
    pub checkpoint: Option<PathBuf>,
    /// Overrides the domain's cardinality cap.
    pub max_cardinality: Option<usize>,
    pub exploration: f64,
    pub threads: usize,
    /// Largest instance solved exactly for the reference value.
    pub bruteforce_agents: usize,
    pub enumeration_limit: u128,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_domain(Domain::Ridesharing)
    }
}

impl ExperimentConfig {
    pub fn for_domain(domain: Domain) -> ExperimentConfig {
        ExperimentConfig {
            domain,
            sizes: vec![50, 100, 200],
            instances_per_size: match domain {
                Domain::Ridesharing => 50,
                Domain::TeamFormation => 20,
            },
            seeds_per_instance: 50,
            instance_seed_base: 0,
            budget_mode: BudgetMode::Wall,
            total_seconds: 60.0,
            split_k: 5.0 / 6.0,
            count_budget: CountBudget::default(),
            methods: Method::ALL.to_vec(),
            checkpoint: None,
            max_cardinality: None,
            exploration: std::f64::consts::SQRT_2,
            threads: 1,
            bruteforce_agents: DEFAULT_BRUTEFORCE_AGENTS,
            enumeration_limit: DEFAULT_ENUMERATION_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a nonempty list of positive agent counts");
        }
        if self.instances_per_size == 0 || self.seeds_per_instance == 0 {
            return bad("instance and seed counts must be positive");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if !(self.split_k > 0.0 && self.split_k < 1.0) {
            return bad("split_k must lie in (0, 1)");
        }
        if self.budget_mode == BudgetMode::Wall && !(self.total_seconds > 0.0 && self.total_seconds.is_finite()) {
            return bad("total_seconds must be positive");
        }
        let c = self.count_budget;
        if self.budget_mode == BudgetMode::Count && (c.generation_rollouts == 0 || c.mcts_iterations == 0) {
            return bad("count budgets must be positive");
        }
        if self.max_cardinality == Some(0) {
            return bad("max_cardinality must be positive");
        }
        Ok(())
    }

    pub fn instance(&self, n: usize, instance_seed: u64) -> Result<Instance> {
        let mut rules = self.domain.default_rules();
        if let Some(cap) = self.max_cardinality {
            rules.max_cardinality = cap;
        }
        generate_instance(self.domain, n, instance_seed)?.with_rules(rules)
    }

    pub fn instance_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.instances_per_size as u64).map(move |k| self.instance_seed_base + k)
    }

    fn generation_budget(&self) -> Budget {
        match self.budget_mode {
            BudgetMode::Wall => Budget::seconds(self.split_k * self.total_seconds),
            BudgetMode::Count => Budget::Count(self.count_budget.generation_rollouts),
        }
    }

    fn solver_budget(&self) -> Budget {
        match self.budget_mode {
            BudgetMode::Wall => Budget::seconds((1.0 - self.split_k) * self.total_seconds),
            BudgetMode::Count => Budget::Count(self.count_budget.solver_nodes),
        }
    }

    fn search_budget(&self) -> Budget {
        match self.budget_mode {
            BudgetMode::Wall => Budget::seconds(self.total_seconds),
            BudgetMode::Count => Budget::Count(self.count_budget.mcts_iterations),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reference {
    ExactOptimum,
    BestKnown,
}

/// One (method, instance, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub n: usize,
    pub instance_seed: u64,
    pub run_seed: u64,
    /// `None` when the method found no feasible solution.
    pub value: Option<f64>,
    pub reference_value: f64,
    pub ratio: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub n: usize,
    pub mean_ratio: f64,
    /// Sample standard deviation of the per-instance mean ratios.
    pub std_dev: f64,
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<RunRecord>,
    /// Sizes whose reference had to fall back to the best known value.
    pub warnings: Vec<String>,
}

/// Quality of `value` relative to `reference`, in `[0, 1]` when the
/// reference is an upper bound. Negative references (log-utility domains)
/// use `reference / value`; a missing solution scores 0.
pub fn optimality_ratio(value: Option<f64>, reference: f64) -> f64 {
    let Some(v) = value else { return 0.0 };
    let ratio = if reference > 0.0 {
        v / reference
    } else if reference < 0.0 {
        if v < 0.0 {
            reference / v
        } else {
            1.0
        }
    } else if v >= 0.0 {
        1.0
    } else {
        0.0
    };
    ratio.max(0.0)
}

fn packing_mode(instance: &Instance) -> PackingMode {
    if instance.rules().partition_required {
        PackingMode::Partition
    } else {
        PackingMode::Packing
    }
}

/// Exact optimum by enumerating every feasible collective, or `None` when
/// the instance exceeds the oracle limits.
pub fn exact_reference(instance: &Instance, max_agents: usize, enumeration_limit: u128) -> Result<Option<f64>> {
    let n = instance.len();
    if n > max_agents || feasible_count(n, instance.rules().max_cardinality) > enumeration_limit {
        return Ok(None);
    }
    let all = enumerate_feasible(instance, enumeration_limit)?;
    let wsp = WspInstance::from_collectives(n, &all, packing_mode(instance))?;
    Ok(Some(solve_bruteforce(&wsp, max_agents)?.packing.total))
}

/// Pool generation followed by the packing solver on the pool.
pub fn run_am(
    params: &PolicyParams,
    instance: &Instance,
    generation: Budget,
    solver: Budget,
    seed: u64,
) -> Result<(CandidatePool, Option<f64>)> {
    let pool = generate_pool(params, instance, generation, &mut rng::stream(seed, &[]))?;
    let solution = solve_bnb(&pool.to_wsp()?, solver)?;
    Ok((pool, Some(solution.packing.total)))
}

fn run_one(
    config: &ExperimentConfig,
    params: Option<&PolicyParams>,
    method: Method,
    instance: &Instance,
    run_seed: u64,
) -> Result<(Option<f64>, u64)> {
    let start = Instant::now();
    let seed = rng::derive_seed(run_seed, &[instance.seed(), instance.len() as u64]);
    let value = match method.rollout_policy() {
        None => {
            let params = params.ok_or_else(|| Error::Config("AM requires a checkpoint".into()))?;
            run_am(params, instance, config.generation_budget(), config.solver_budget(), seed)?.1
        }
        Some(rollout) => {
            let mcts = MctsConfig { exploration: config.exploration, rollout, budget: config.search_budget(), seed };
            mcts_search(instance, mcts)?.packing.map(|p| p.total)
        }
    };
    let wall_ms = match config.budget_mode {
        BudgetMode::Wall => start.elapsed().as_millis() as u64,
        BudgetMode::Count => 0,
    };
    Ok((value, wall_ms))
}

/// Loads the checkpoint (when AM is requested) and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let params = if config.methods.contains(&Method::Am) {
        let path = config.checkpoint.as_ref().ok_or_else(|| Error::Config("AM requires a checkpoint".into()))?;
        let params = PolicyParams::load(path)
            .map_err(|e| Error::Config(format!("cannot load checkpoint {}: {e}", path.display())))?;
        Some(params)
    } else {
        None
    };
    run_experiment_with(config, params.as_ref())
}

/// Runs every method on every (instance, seed) with already loaded parameters.
pub fn run_experiment_with(config: &ExperimentConfig, params: Option<&PolicyParams>) -> Result<ExperimentReport> {
    config.validate()?;
    if config.methods.contains(&Method::Am) {
        let params = params.ok_or_else(|| Error::Config("AM requires a checkpoint".into()))?;
        if params.config.domain != config.domain {
            return Err(Error::Config(format!(
                "checkpoint is for {:?} but the experiment uses {:?}",
                params.config.domain, config.domain
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &n in &config.sizes {
        let instances = config.instance_seeds().map(|s| config.instance(n, s)).collect::<Result<Vec<_>>>()?;
        let references = pool.install(|| {
            instances
                .par_iter()
                .map(|inst| exact_reference(inst, config.bruteforce_agents, config.enumeration_limit))
                .collect::<Result<Vec<_>>>()
        })?;
        let jobs: Vec<(Method, usize, u64)> = methods
            .iter()
            .flat_map(|&m| {
                (0..instances.len()).flat_map(move |i| (0..config.seeds_per_instance as u64).map(move |s| (m, i, s)))
            })
            .collect();
        let outcomes = pool.install(|| {
            jobs.par_iter()
                .map(|&(m, i, s)| run_one(config, params, m, &instances[i], s))
                .collect::<Result<Vec<_>>>()
        })?;

        let exact = references.iter().all(Option::is_some);
        if !exact {
            let msg = format!("n = {n}: exact reference out of reach, ratios are relative to the best known value");
            warn!("{msg}");
            warnings.push(msg);
        }
        let reference_of = |i: usize| -> f64 {
            references[i].unwrap_or_else(|| {
                jobs.iter()
                    .zip(&outcomes)
                    .filter(|((_, j, _), _)| *j == i)
                    .filter_map(|(_, (v, _))| *v)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
        };
        let reference_values: Vec<f64> = (0..instances.len()).map(reference_of).collect();
        let mut size_records: Vec<RunRecord> = jobs
            .iter()
            .zip(outcomes)
            .map(|(&(method, i, run_seed), (value, wall_ms))| {
                let reference_value = reference_values[i];
                RunRecord {
                    method,
                    n,
                    instance_seed: instances[i].seed(),
                    run_seed,
                    value,
                    reference_value,
                    ratio: optimality_ratio(value, reference_value),
                    wall_ms,
                }
            })
            .collect();
        size_records.sort_by(|a, b| {
            (a.method, a.n, a.instance_seed, a.run_seed).cmp(&(b.method, b.n, b.instance_seed, b.run_seed))
        });
        for &method in &methods {
            let per_instance: Vec<f64> = instances
                .iter()
                .map(|inst| {
                    let ratios: Vec<f64> = size_records
                        .iter()
                        .filter(|r| r.method == method && r.instance_seed == inst.seed())
                        .map(|r| r.ratio)
                        .collect();
                    mean(&ratios)
                })
                .collect();
            rows.push(ReportRow {
                method,
                n,
                mean_ratio: mean(&per_instance),
                std_dev: sample_std(&per_instance),
                reference: if exact { Reference::ExactOptimum } else { Reference::BestKnown },
            });
        }
        records.extend(size_records);
    }
    Ok(ExperimentReport { rows, records, warnings })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Writes the run records as CSV after a `# <config json>` header line.
pub fn write_records_csv<W: Write>(mut w: W, config: &ExperimentConfig, records: &[RunRecord]) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(config)?)?;
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a file written by [`write_records_csv`].
pub fn read_records_csv<R: BufRead>(r: R) -> Result<(ExperimentConfig, Vec<RunRecord>)> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let json = header
        .strip_prefix("# ")
        .ok_or_else(|| Error::InvalidArgument("missing config header line".into()))?;
    let config: ExperimentConfig = serde_json::from_str(json)?;
    let body = lines.collect::<std::io::Result<Vec<_>>>()?.join("\n");
    let records = csv::Reader::from_reader(body.as_bytes()).deserialize().collect::<std::result::Result<_, _>>()?;
    Ok((config, records))
}

pub fn write_report_csv<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Value histograms of two models' pools over shared bin edges.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityReport {
    pub edges: Vec<f64>,
    pub density_a: Vec<f64>,
    pub density_b: Vec<f64>,
    pub distinct_a: usize,
    pub distinct_b: usize,
}

impl DiversityReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# distinct_a={} distinct_b={}", self.distinct_a, self.distinct_b)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_lo", "bin_hi", "density_a", "density_b"])?;
        for (k, (a, b)) in self.density_a.iter().zip(&self.density_b).enumerate() {
            out.serialize((self.edges[k], self.edges[k + 1], a, b))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Generates a pool from each model with the same budget and seed.
pub fn diversity_report(
    model_a: &PolicyParams,
    model_b: &PolicyParams,
    instance: &Instance,
    budget: Budget,
    seed: u64,
    bins: usize,
) -> Result<DiversityReport> {
    for params in [model_a, model_b] {
        if params.config.domain != instance.domain() {
            return Err(Error::Config(format!(
                "checkpoint is for {:?} but the instance is {:?}",
                params.config.domain,
                instance.domain()
            )));
        }
    }
    let pool_a = generate_pool(model_a, instance, budget, &mut rng::stream(seed, &[]))?;
    let pool_b = generate_pool(model_b, instance, budget, &mut rng::stream(seed, &[]))?;
    let values = |p: &CandidatePool| p.collectives().iter().map(|c| c.value()).collect::<Vec<_>>();
    let (va, vb) = (values(&pool_a), values(&pool_b));
    let lo = va.iter().chain(&vb).copied().fold(f64::INFINITY, f64::min);
    let hi = va.iter().chain(&vb).copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DiversityReport {
        edges: bin_edges(lo, hi, bins),
        density_a: histogram(&va, lo, hi, bins),
        density_b: histogram(&vb, lo, hi, bins),
        distinct_a: pool_a.len(),
        distinct_b: pool_b.len(),
    })
}

/// Converts seconds to a wall budget, or passes a count budget through.
pub fn budget_for(mode: BudgetMode, seconds: f64, count: u64) -> Budget {
    match mode {
        BudgetMode::Wall => Budget::Wall(Duration::from_secs_f64(seconds.max(0.0))),
        BudgetMode::Count => Budget::Count(count),
    }
}
