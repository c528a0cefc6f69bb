//! Experiment runner: plans, seeded sweeps and metric files.
//!
//! A plan is the cross product of methods, rewards, arm counts and seeds.
//! Methods that ignore the reward get a single cell per `(K, seed)`, labelled
//! `na`; loss scaling is labelled with the reward it scales by.
//!
//! Seeds. Every listed seed `s` names one benchmark suite (generated from
//! `derive(s, "suite")` with the largest requested `K`, smaller `K` taking a
//! prefix of its arms) and one model initialization shared by every method.
//! The sampling stream of a cell is seeded with
//! `derive_index(derive(derive(s, method), reward), K)`, built from SplitMix64
//! and FNV-1a in [`crate::seed`], so adding cells never perturbs existing ones.

mod output;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

pub use output::{emit_metrics, format_float, SUMMARY_HEADER};

use crate::error::{FladError, Result};
use crate::harness::{run, PolicyKind, RunResult, TrainConfig};
use crate::rewards::RewardKind;
use crate::seed;
use crate::tasks::{benchmark_suite, SyntheticSuite};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "FLAD_OUT";
const DEFAULT_OUT: &str = "flad-out";
const DEFAULT_K: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "flad", version, about = "Few-shot training with bandit-selected auxiliary data")]
pub struct Args {
    /// Methods to run, comma separated (exp3, ucb1, explore_only, exploit_only,
    /// loss_scaling_ga, loss_scaling_gms, target_only).
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<PolicyKind>,
    /// Rewards for the bandit methods, comma separated (ga, gms, agg).
    #[arg(long, value_delimiter = ',')]
    pub reward: Vec<RewardKind>,
    /// Auxiliary arm counts to sweep, comma separated.
    #[arg(long = "num-aux", value_delimiter = ',')]
    pub num_aux: Vec<usize>,
    /// Seeds: `3`, `0..4` (inclusive) or a comma separated mix.
    #[arg(long)]
    pub seed: Option<String>,
    /// Maximum model updates per run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Auxiliary micro-batches per update.
    #[arg(long = "accum-G")]
    pub accum_g: Option<usize>,
    #[arg(long = "micro-batch")]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// UCB1 smoothing factor in (0, 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Target mixing ratio of the mixture baselines.
    #[arg(long = "mix-ratio-M")]
    pub mix_ratio: Option<f64>,
    /// Gibbs temperature of exploit-only.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Updates between reward probes; 0 disables them.
    #[arg(long = "probe-interval")]
    pub probe_interval: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Suite file to train on instead of the generated benchmark.
    #[arg(long = "suite-file")]
    pub suite_file: Option<PathBuf>,
    /// Output directory (default: $FLAD_OUT, then ./flad-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML plan file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Plan file layout. Top-level keys mirror the flags; `[train]` holds any
/// [`TrainConfig`] field.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlanFile {
    policy: Option<Vec<PolicyKind>>,
    reward: Option<Vec<RewardKind>>,
    num_aux: Option<Vec<usize>>,
    seed: Option<SeedField>,
    suite_file: Option<PathBuf>,
    out: Option<PathBuf>,
    train: Option<TrainConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SeedField {
    One(u64),
    List(Vec<u64>),
    Spec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SuiteSource {
    /// The generated benchmark, one suite per seed.
    Benchmark,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub suite: SuiteSource,
    pub methods: Vec<PolicyKind>,
    pub rewards: Vec<RewardKind>,
    pub seeds: Vec<u64>,
    pub num_aux: Vec<usize>,
    pub out: PathBuf,
    /// Shared settings; `policy`, `reward` and `seed` are set per cell.
    pub train: TrainConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            suite: SuiteSource::Benchmark,
            methods: vec![PolicyKind::Ucb1],
            rewards: vec![RewardKind::Agg],
            seeds: vec![0],
            num_aux: vec![DEFAULT_K],
            out: PathBuf::from(DEFAULT_OUT),
            train: TrainConfig::default(),
        }
    }
}

/// One `(method, reward, K, seed)` run of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub method: PolicyKind,
    /// Reward the method uses, `None` for methods that use none.
    pub reward: Option<RewardKind>,
    pub num_aux: usize,
    pub seed: u64,
}

impl Cell {
    pub fn reward_label(&self) -> &'static str {
        self.reward.map_or("na", RewardKind::name)
    }

    /// Seed of the cell's sampling stream.
    pub fn stream_seed(&self) -> u64 {
        let s = seed::derive(self.seed, self.method.name());
        seed::derive_index(seed::derive(s, self.reward_label()), self.num_aux as u64)
    }

    /// File-name stem shared by this cell's outputs.
    pub fn stem(&self) -> String {
        format!(
            "{}_{}_K{}_s{}",
            self.method.name(),
            self.reward_label(),
            self.num_aux,
            self.seed
        )
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(FladError::InvalidConfig("no methods in plan".into()));
        }
        if self.seeds.is_empty() {
            return Err(FladError::InvalidConfig("no seeds in plan".into()));
        }
        if self.num_aux.is_empty() || self.num_aux.contains(&0) {
            return Err(FladError::InvalidConfig("arm counts must be positive".into()));
        }
        if self.rewards.is_empty() && self.methods.iter().any(|m| m.uses_reward()) {
            return Err(FladError::InvalidConfig("bandit methods need a reward".into()));
        }
        self.train.validate()
    }

    /// Every cell, deduplicated, in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &method in &self.methods {
            let rewards: Vec<Option<RewardKind>> = match method {
                PolicyKind::Exp3 | PolicyKind::Ucb1 => self.rewards.iter().copied().map(Some).collect(),
                other => vec![other.effective_reward(RewardKind::Agg)],
            };
            for reward in rewards {
                for &num_aux in &self.num_aux {
                    for &seed in &self.seeds {
                        let cell = Cell { method, reward, num_aux, seed };
                        if !cells.contains(&cell) {
                            cells.push(cell);
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Outcome of one cell: a run, or the reason it failed.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: std::result::Result<RunResult, String>,
}

impl CellOutcome {
    pub fn failed(&self) -> bool {
        match &self.result {
            Ok(r) => r.aborted.is_some(),
            Err(_) => true,
        }
    }
}

/// Aggregate over the seeds of one `(method, reward, K)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: PolicyKind,
    pub reward: Option<RewardKind>,
    pub num_aux: usize,
    pub seed_count: usize,
    pub mean_acc: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_acc: f64,
    pub mean_convergence_step: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsBundle {
    pub outcomes: Vec<CellOutcome>,
}

impl MetricsBundle {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.failed()).count()
    }

    pub fn get(&self, method: PolicyKind, reward: Option<RewardKind>, num_aux: usize, seed: u64) -> Option<&RunResult> {
        self.outcomes
            .iter()
            .find(|o| {
                o.cell.method == method
                    && o.cell.reward == reward
                    && o.cell.num_aux == num_aux
                    && o.cell.seed == seed
            })
            .and_then(|o| o.result.as_ref().ok())
    }

    /// One row per `(method, reward, K)` over the runs that completed.
    pub fn summary(&self) -> Vec<SummaryRow> {
        type Key = (usize, Option<RewardKind>, usize);
        let mut groups: BTreeMap<Key, (PolicyKind, Vec<&RunResult>)> = BTreeMap::new();
        for o in &self.outcomes {
            let key = (method_rank(o.cell.method), o.cell.reward, o.cell.num_aux);
            let entry = groups.entry(key).or_insert((o.cell.method, Vec::new()));
            if let Ok(r) = &o.result {
                entry.1.push(r);
            }
        }
        groups
            .into_iter()
            .map(|((_, reward, num_aux), (method, runs))| {
                let accs: Vec<f64> = runs.iter().map(|r| r.heldout_acc).collect();
                let steps: Vec<f64> = runs.iter().map(|r| r.convergence_step as f64).collect();
                SummaryRow {
                    method,
                    reward,
                    num_aux,
                    seed_count: runs.len(),
                    mean_acc: mean(&accs),
                    std_acc: sample_std(&accs),
                    mean_convergence_step: mean(&steps),
                }
            })
            .collect()
    }
}

fn method_rank(method: PolicyKind) -> usize {
    PolicyKind::ALL.iter().position(|&m| m == method).unwrap_or(usize::MAX)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn sample_std(values: &[f64]) -> f64 {
    match values.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(values);
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

/// Parses `7`, `0..4` (inclusive) and comma separated mixtures of both.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || FladError::InvalidConfig(format!("cannot parse seed list `{spec}`"));
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u64 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if hi < lo {
                return Err(bad());
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    let mut seen = std::collections::BTreeSet::new();
    seeds.retain(|s| seen.insert(*s));
    Ok(seeds)
}

/// Builds a plan from command-line arguments (program name first).
pub fn parse_plan<I, T>(args: I) -> Result<ExperimentPlan>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = Args::try_parse_from(args).map_err(|e| FladError::InvalidConfig(e.to_string()))?;
    plan_from_args(args, std::env::var_os(OUT_ENV).map(PathBuf::from))
}

/// Merges defaults, the plan file (if any) and flags, in rising precedence.
/// `env_out` is the value of `FLAD_OUT`, used when neither names an output.
pub fn plan_from_args(args: Args, env_out: Option<PathBuf>) -> Result<ExperimentPlan> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| FladError::Io(format!("{}: {e}", path.display())))?;
            toml::from_str::<PlanFile>(&text)
                .map_err(|e| FladError::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => PlanFile::default(),
    };

    let mut plan = ExperimentPlan::default();
    if let Some(train) = file.train {
        plan.train = train;
    }
    if let Some(v) = file.policy {
        plan.methods = v;
    }
    if let Some(v) = file.reward {
        plan.rewards = v;
    }
    if let Some(v) = file.num_aux {
        plan.num_aux = v;
    }
    if let Some(v) = file.seed {
        plan.seeds = match v {
            SeedField::One(s) => vec![s],
            SeedField::List(l) => l,
            SeedField::Spec(s) => parse_seeds(&s)?,
        };
    }
    if let Some(p) = file.suite_file {
        plan.suite = SuiteSource::File(p);
    }
    plan.out = args
        .out
        .or(file.out)
        .or(env_out)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    if !args.policy.is_empty() {
        plan.methods = args.policy;
    }
    if !args.reward.is_empty() {
        plan.rewards = args.reward;
    }
    if !args.num_aux.is_empty() {
        plan.num_aux = args.num_aux;
    }
    if let Some(s) = &args.seed {
        plan.seeds = parse_seeds(s)?;
    }
    if let Some(p) = args.suite_file {
        plan.suite = SuiteSource::File(p);
    }
    let t = &mut plan.train;
    let overrides = [
        (args.steps, &mut t.max_steps),
        (args.accum_g, &mut t.accum_steps),
        (args.micro_batch, &mut t.micro_batch),
        (args.probe_interval, &mut t.probe_interval),
        (args.patience, &mut t.patience),
    ];
    for (flag, field) in overrides {
        if let Some(v) = flag {
            *field = v;
        }
    }
    let overrides = [
        (args.lr, &mut t.lr),
        (args.beta, &mut t.beta),
        (args.mix_ratio, &mut t.mix_ratio),
        (args.temperature, &mut t.temperature),
    ];
    for (flag, field) in overrides {
        if let Some(v) = flag {
            *field = v;
        }
    }
    plan.validate()?;
    Ok(plan)
}

fn load_suites(plan: &ExperimentPlan) -> Result<Vec<SyntheticSuite>> {
    let max_k = plan.num_aux.iter().copied().max().unwrap_or(DEFAULT_K);
    match &plan.suite {
        SuiteSource::Benchmark => plan
            .seeds
            .iter()
            .map(|&s| benchmark_suite(max_k, seed::derive(s, "suite")))
            .collect(),
        SuiteSource::File(path) => {
            let suite = SyntheticSuite::load(path)?;
            if suite.num_aux() < max_k {
                return Err(FladError::InvalidConfig(format!(
                    "{} has {} arms, plan asks for {max_k}",
                    path.display(),
                    suite.num_aux()
                )));
            }
            Ok(vec![suite])
        }
    }
}

fn run_cell(plan: &ExperimentPlan, cell: Cell, suite: &SyntheticSuite) -> std::result::Result<RunResult, String> {
    let body = || -> Result<RunResult> {
        let suite = suite.with_arms(cell.num_aux)?;
        let mut config = plan.train.clone();
        config.policy = cell.method;
        if let Some(r) = cell.reward {
            config.reward = r;
        }
        config.seed = cell.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(cell.stream_seed());
        run(&config, &suite, &mut rng)
    };
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "run panicked".into())),
    }
}

/// Runs every cell in parallel. A failing cell is recorded, never fatal to
/// its siblings; only an unusable plan or suite is an error.
pub fn run_plan(plan: &ExperimentPlan) -> Result<MetricsBundle> {
    plan.validate()?;
    let suites = load_suites(plan)?;
    let suite_for = |seed: u64| -> &SyntheticSuite {
        match plan.suite {
            SuiteSource::Benchmark => {
                let i = plan.seeds.iter().position(|&s| s == seed).unwrap_or(0);
                &suites[i]
            }
            SuiteSource::File(_) => &suites[0],
        }
    };
    let outcomes = plan
        .cells()
        .into_par_iter()
        .map(|cell| CellOutcome {
            cell,
            result: run_cell(plan, cell, suite_for(cell.seed)),
        })
        .collect();
    Ok(MetricsBundle { outcomes })
}

/// Entry point of the binary: returns the process exit code.
pub fn main_with(args: Args) -> i32 {
    let plan = match plan_from_args(args, std::env::var_os(OUT_ENV).map(PathBuf::from)) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let bundle = match run_plan(&plan) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    for o in bundle.outcomes.iter().filter(|o| o.failed()) {
        let why = match &o.result {
            Ok(r) => r.aborted.clone().unwrap_or_default(),
            Err(e) => e.clone(),
        };
        eprintln!("cell {} failed: {why}", o.cell.stem());
    }
    if let Err(e) = emit_metrics(&bundle, &plan.out) {
        eprintln!("error: {e}");
        return 1;
    }
    print_summary(&bundle, &plan.out);
    if bundle.failures() > 0 {
        1
    } else {
        0
    }
}

fn print_summary(bundle: &MetricsBundle, out: &Path) {
    println!("{:<18} {:<6} {:>4} {:>5} {:>9} {:>9} {:>9}", "method", "reward", "K", "seeds", "mean_acc", "std_acc", "conv");
    for row in bundle.summary() {
        println!(
            "{:<18} {:<6} {:>4} {:>5} {:>9.4} {:>9.4} {:>9.1}",
            row.method.name(),
            row.reward.map_or("na", RewardKind::name),
            row.num_aux,
            row.seed_count,
            row.mean_acc,
            row.std_acc,
            row.mean_convergence_step
        );
    }
    println!("wrote {}", out.display());
}
