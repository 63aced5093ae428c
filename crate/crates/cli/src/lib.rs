//! Command implementations behind the `districting` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use districting::init::{guided_growth, seed_plan};
use districting::instance::{
    generate_grid_file, load_instance, load_plan, read_instance_file, save_plan, BalanceProfile, GridSpec,
};
use districting::memetic::{spatial_run, write_generation_csv, MemeticConfig};
use districting::objective::{balance_score, compactness_score, evaluate, planning_report};
use districting::oracle::solve_exhaustive;
use districting::par::{self, stream_rng, Parallelism};
use districting::search::{run_baseline, run_chain, write_trace_csv, Baseline, Sampler, SearchConfig};
use districting::{CompactnessMode, Instance, Level, ObjectiveConfig, Plan};
use serde::Serialize;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "DISTRICTING_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] districting::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration, 3 for instance or plan data, 4 for internal
    /// failures.
    pub fn exit_code(&self) -> i32 {
        use districting::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::Geometry(_) | E::InvalidInstance(_) | E::InvalidPlan(_) | E::Evaluation(_) | E::Io(_) | E::Json(_) => 3,
                E::UnreachableNodes(_) => 3,
                E::Contract(_) | E::NoFeasibleFlip | E::Internal(_) => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Prefixes file-system errors with the offending path.
fn at_path<T>(path: &Path, r: districting::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        districting::Error::Io(io) => CliError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other.into(),
    })
}

#[derive(Debug, Parser)]
#[command(name = "districting", version, about = "Contiguous, balanced and compact territory design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded trials of a solver and write plans, traces and a summary.
    Solve(SolveArgs),
    /// Report planning metrics of a plan, optionally against a baseline plan.
    Evaluate(EvaluateArgs),
    /// Write a synthetic rook-grid instance.
    Generate(GenerateArgs),
    /// Exhaustively find the optimal plan of a tiny instance.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Compactness {
    /// Polsby-Popper score of the dissolved territory.
    Pp,
    /// Retained internal edges.
    Edgecut,
}

impl From<Compactness> for CompactnessMode {
    fn from(c: Compactness) -> Self {
        match c {
            Compactness::Pp => CompactnessMode::PolsbyPopper,
            Compactness::Edgecut => CompactnessMode::EdgeCutProxy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Spatial,
    Shc,
    Sa,
    Ts,
    Baa,
    Bcaa,
    Aio,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Spatial => "spatial",
            Algorithm::Shc => "shc",
            Algorithm::Sa => "sa",
            Algorithm::Ts => "ts",
            Algorithm::Baa => "baa",
            Algorithm::Bcaa => "bcaa",
            Algorithm::Aio => "aio",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ObjectiveArgs {
    /// School level whose population and capacity are balanced.
    #[arg(long, default_value = "es")]
    pub level: Level,
    /// Weight of the balance term.
    #[arg(long, default_value_t = 0.7)]
    pub lambda: f64,
    /// Balance band used when validating plans.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = Compactness::Pp)]
    pub compactness: Compactness,
}

impl ObjectiveArgs {
    pub fn config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            tau: self.tau,
            compactness_mode: self.compactness.into(),
        }
    }

    fn load(&self, path: &Path) -> CliResult<Instance> {
        let config = self.config();
        config.validate()?;
        at_path(path, load_instance(path, self.level, config))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[arg(long, value_enum, default_value_t = Algorithm::Spatial)]
    pub algo: Algorithm,
    /// Population size.
    #[arg(long, default_value_t = 10)]
    pub np: usize,
    /// Outer iterations (spatial) or iteration budget (shc, sa, ts).
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Proposals per chain (baa, bcaa, aio).
    #[arg(long, default_value_t = 10_000)]
    pub chain_steps: usize,
    /// Probability of accepting a non-improving flip.
    #[arg(long, default_value_t = 0.01)]
    pub pr: f64,
    /// Balance tolerance of the baa and bcaa samplers.
    #[arg(long, default_value_t = 0.15)]
    pub band: f64,
    /// Seed of the first trial; trial t uses seed + t.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Start every search from this plan instead of random growth.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Validate the plan after every accepted move.
    #[arg(long)]
    pub check_invariants: bool,
    /// Run trials concurrently (results are identical).
    #[arg(long)]
    pub parallel_trials: bool,
    /// Disable data parallelism inside a trial.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub instance: PathBuf,
    /// Existing plan to count displaced population against.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Uniform,
    ClusteredGrowth,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Number of territories (school units).
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Profile::Uniform)]
    pub profile: Profile,
    /// Comma-separated center unit ids instead of random placement.
    #[arg(long, value_delimiter = ',')]
    pub centers: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

pub fn run<W: Write>(cli: Cli, out: &mut W) -> CliResult<()> {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Generate(a) => cmd_generate(&a, out),
        Command::Oracle(a) => cmd_oracle(&a, out),
    }
}

/// Reads the worker count from [`THREADS_ENV`], if set.
pub fn init_workers_from_env() -> CliResult<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(CliError::Config(format!("{THREADS_ENV} must be at least 1")));
        }
        par::init_workers(n);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    #[serde(rename = "J")]
    pub j: f64,
    pub balance_score: f64,
    pub compactness_score: Option<f64>,
    pub plan_file: String,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub algorithm: String,
    pub trials: usize,
    pub seed: u64,
    #[serde(rename = "J")]
    pub j: String,
    pub balance_score: String,
    pub compactness_score: Option<String>,
    pub per_trial: Vec<TrialRecord>,
}

/// Sample mean and standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean±std` with four decimals, e.g. `87.9353±0.6175`.
pub fn format_mean_std(xs: &[f64]) -> String {
    let (m, s) = mean_std(xs);
    format!("{m:.4}±{s:.4}")
}

pub fn file_stem(algo: Algorithm, seed: u64, trial: usize) -> String {
    format!("{}_seed{}_trial{}", algo.name(), seed, trial)
}

struct TrialOutput {
    plan: Plan,
    trace_csv: Vec<u8>,
}

fn run_trial(args: &SolveArgs, instance: &Instance, warm: Option<&Plan>, seed: u64) -> CliResult<TrialOutput> {
    let search = SearchConfig {
        p_r: args.pr,
        max_iters: args.iters,
        chain_steps: args.chain_steps,
        epsilon_band: args.band,
        check_invariants: args.check_invariants,
        ..SearchConfig::default()
    };
    let parallelism = if args.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    let mut trace_csv = Vec::new();
    let start = || -> CliResult<Plan> {
        Ok(match warm {
            Some(p) => {
                let mut p = p.clone();
                districting::memetic::repair(&mut p, instance, &mut stream_rng(seed, 1))?;
                p
            }
            None => guided_growth(seed_plan(instance), instance, &mut stream_rng(seed, 1))?,
        })
    };
    let plan = match args.algo {
        Algorithm::Spatial => {
            let config = MemeticConfig {
                np: args.np,
                iter_max: args.iters,
                search,
                parallelism,
                ..MemeticConfig::default()
            };
            let r = spatial_run(instance, &config, seed, warm)?;
            write_generation_csv(&r.trace, &mut trace_csv)?;
            r.best
        }
        Algorithm::Shc | Algorithm::Sa | Algorithm::Ts => {
            let algo = match args.algo {
                Algorithm::Shc => Baseline::Shc,
                Algorithm::Sa => Baseline::Sa,
                _ => Baseline::Ts,
            };
            let r = run_baseline(instance, algo, &search, &mut stream_rng(seed, 0), start()?)?;
            write_trace_csv(&r.trace, &mut trace_csv)?;
            r.best
        }
        Algorithm::Baa | Algorithm::Bcaa | Algorithm::Aio => {
            let sampler = match args.algo {
                Algorithm::Baa => Sampler::Baa,
                Algorithm::Bcaa => Sampler::Bcaa,
                _ => Sampler::Aio,
            };
            let r = run_chain(instance, sampler, &search, &mut stream_rng(seed, 0), start()?)?;
            write_trace_csv(&r.search.trace, &mut trace_csv)?;
            r.search.best
        }
    };
    Ok(TrialOutput { plan, trace_csv })
}

pub fn cmd_solve<W: Write>(args: &SolveArgs, out: &mut W) -> CliResult<()> {
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let instance = args.objective.load(&args.instance)?;
    for w in instance.objective().warnings() {
        eprintln!("warning: {w}");
    }
    let warm = match &args.warm_start {
        Some(path) => Some(at_path(path, load_plan(path, &instance))?.plan),
        None => None,
    };
    fs::create_dir_all(&args.out)?;

    let mode = if args.parallel_trials {
        Parallelism::Parallel
    } else {
        Parallelism::Sequential
    };
    let outputs = par::map_range(args.trials, mode, |t| {
        run_trial(args, &instance, warm.as_ref(), args.seed + t as u64)
    });

    let has_geometry = instance.graph().has_geometry();
    let mut records = Vec::with_capacity(args.trials);
    for (t, output) in outputs.into_iter().enumerate() {
        let output = output?;
        let stem = file_stem(args.algo, args.seed, t);
        let plan_file = format!("{stem}.plan.json");
        let trace_file = format!("{stem}.trace.csv");
        save_plan(&output.plan, args.out.join(&plan_file))?;
        fs::write(args.out.join(&trace_file), &output.trace_csv)?;
        records.push(TrialRecord {
            trial: t,
            seed: args.seed + t as u64,
            j: evaluate(&output.plan, &instance)?.j,
            balance_score: balance_score(&output.plan, &instance)?,
            compactness_score: if has_geometry {
                Some(compactness_score(&output.plan, &instance)?)
            } else {
                None
            },
            plan_file,
            trace_file,
        });
    }

    let column = |f: &dyn Fn(&TrialRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let summary = Summary {
        algorithm: args.algo.name().to_string(),
        trials: args.trials,
        seed: args.seed,
        j: format_mean_std(&column(&|r| r.j)),
        balance_score: format_mean_std(&column(&|r| r.balance_score)),
        compactness_score: has_geometry.then(|| format_mean_std(&column(&|r| r.compactness_score.unwrap_or(0.0)))),
        per_trial: records,
    };
    let summary_file = args.out.join(format!("{}_seed{}_summary.json", args.algo.name(), args.seed));
    let text = serde_json::to_string_pretty(&summary).map_err(districting::Error::from)? + "\n";
    fs::write(&summary_file, &text)?;
    writeln!(
        out,
        "{}: {} trial(s), J {}, balance {}, compactness {}",
        summary.algorithm,
        summary.trials,
        summary.j,
        summary.balance_score,
        summary.compactness_score.as_deref().unwrap_or("—")
    )?;
    writeln!(out, "summary written to {}", summary_file.display())?;
    Ok(())
}

pub fn cmd_evaluate<W: Write>(args: &EvaluateArgs, out: &mut W) -> CliResult<()> {
    let instance = args.objective.load(&args.instance)?;
    let loaded = at_path(&args.plan, load_plan(&args.plan, &instance))?;
    if !loaded.moved.is_empty() {
        eprintln!("warning: plan was repaired; nodes moved: {:?}", loaded.moved);
    }
    let baseline = match &args.baseline {
        Some(path) => Some(at_path(path, load_plan(path, &instance))?.plan),
        None => None,
    };
    let report = planning_report(&loaded.plan, baseline.as_ref(), &instance)?;
    let objective = evaluate(&loaded.plan, &instance)?;
    #[derive(Serialize)]
    struct Output<'a> {
        report: &'a districting::objective::PlanningReport,
        objective: &'a districting::ObjectiveReport,
    }
    let json = serde_json::to_string_pretty(&Output {
        report: &report,
        objective: &objective,
    })
    .map_err(districting::Error::from)?;
    writeln!(out, "{json}")?;
    writeln!(out)?;
    write!(out, "{}", report.to_table())?;
    Ok(())
}

pub fn cmd_generate<W: Write>(args: &GenerateArgs, out: &mut W) -> CliResult<()> {
    let profile = match args.profile {
        Profile::Uniform => BalanceProfile::Uniform,
        Profile::ClusteredGrowth => BalanceProfile::ClusteredGrowth,
    };
    let mut spec = GridSpec::new(args.rows, args.cols, args.k, args.seed, profile);
    if let Some(centers) = &args.centers {
        spec = spec.with_centers(centers.clone());
    }
    let file = generate_grid_file(&spec)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, file.to_json()?)?;
    // round-trip so a bad file never leaves this command silently
    read_instance_file(&args.out)?;
    writeln!(
        out,
        "wrote {}x{} instance with {} units to {}",
        args.rows,
        args.cols,
        args.rows * args.cols,
        args.out.display()
    )?;
    Ok(())
}

pub fn cmd_oracle<W: Write>(args: &OracleArgs, out: &mut W) -> CliResult<()> {
    let instance = args.objective.load(&args.instance)?;
    let result = solve_exhaustive(&instance)?;
    let json = serde_json::to_string_pretty(&result).map_err(districting::Error::from)?;
    writeln!(out, "{json}")?;
    Ok(())
}
