mod format;
mod svg;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eot::{Algorithm, DatasetKind, DatasetSpec, GridSpec, Problem, SolveResult, SolverConfig};
use rayon::prelude::*;
use serde::Serialize;

use format::GapDoc;

/// A failed command: exit code plus a message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

#[derive(Parser)]
#[command(name = "eot", version, about = "Solvers and certificates for entropic equitable transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance with one or more algorithms and write traces, plans and gap reports.
    Run(RunArgs),
    /// Check a plan file against an instance and print its duality gap.
    Certify(CertifyArgs),
    /// Generate a synthetic instance file.
    Gen(GenArgs),
    /// Brute-force ground truth for a tiny instance (n = 2, N <= 2).
    Oracle(OracleArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset kind: fragmented_hypercube, gaussian or metric_suite.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Number of agents.
    #[arg(long, default_value_t = 5)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise level (a variance unless --noise-is-std).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    noise_is_std: bool,
    /// Hypercube dimension.
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Shifted hypercube coordinates.
    #[arg(long, default_value_t = 2)]
    m_star: usize,
}

impl DatasetArgs {
    fn spec(&self) -> Result<Option<DatasetSpec>, Failure> {
        let Some(kind) = &self.dataset else { return Ok(None) };
        let kind: DatasetKind = kind.parse().map_err(Failure::from)?;
        let mut spec = DatasetSpec::new(kind, self.n, self.agents, self.seed);
        spec.noise = self.noise;
        spec.noise_is_std = self.noise_is_std;
        spec.d = self.d;
        spec.m_star = self.m_star;
        spec.validate()?;
        Ok(Some(spec))
    }
}

#[derive(Args)]
struct RunArgs {
    /// Instance file; overrides --dataset.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    data: DatasetArgs,
    /// Comma-separated subset of pam, pame, apga.
    #[arg(long, default_value = "pam,pame,apga")]
    algorithms: String,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Overrides the scheduled regularization.
    #[arg(long)]
    eta: Option<f64>,
    /// Overrides the scheduled step size.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// APGA Lipschitz estimate.
    #[arg(long)]
    lipschitz: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    trace_every: usize,
    /// Run all iterations instead of stopping on the residual tests.
    #[arg(long)]
    no_stop: bool,
    #[arg(long, env = "EOT_OUTPUT_DIR", default_value = "eot-out")]
    out: PathBuf,
    /// Write an error-versus-time plot.
    #[arg(long)]
    svg: bool,
    /// PAM iterations for the reference value used by the plot.
    #[arg(long, default_value_t = 20_000)]
    reference_iters: usize,
    /// Skip writing plan files.
    #[arg(long)]
    no_plan: bool,
    /// Skip computing gap reports.
    #[arg(long)]
    no_gap: bool,
    /// Run the algorithms concurrently (timings are then not comparable).
    #[arg(long)]
    parallel: bool,
    #[arg(long, env = "EOT_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Plan file as written by `run`.
    #[arg(long)]
    plan: PathBuf,
    /// JSON array of agent weights; defaults to the plan file's weights.
    #[arg(long)]
    lambda: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Destination file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = GridSpec::default().resolution)]
    resolution: usize,
    #[arg(long, default_value_t = GridSpec::default().refine)]
    refine: usize,
}

fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>, Failure> {
    let algs: Vec<Algorithm> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Algorithm>().map_err(Failure::from))
        .collect::<Result<_, _>>()?;
    if algs.is_empty() {
        return Err(Failure::config("at least one algorithm is required"));
    }
    Ok(algs)
}

fn load_problem(instance: &Option<PathBuf>, data: &DatasetArgs) -> Result<Problem, Failure> {
    if let Some(path) = instance {
        return format::load_instance(path);
    }
    let spec = data.spec()?.ok_or_else(|| Failure::config("give --instance or --dataset"))?;
    Ok(eot::generate(&spec)?)
}

fn solver_config(args: &RunArgs, problem: &Problem, alg: Algorithm) -> Result<SolverConfig<f64>, Failure> {
    let mut cfg = if problem.c_inf() == 0.0 {
        SolverConfig::with_params(args.epsilon, args.eta.unwrap_or(args.epsilon), args.tau.unwrap_or(1.0))
    } else {
        eot::default_schedule(problem, args.epsilon, alg)?
    };
    if let Some(eta) = args.eta {
        cfg.eta = eta;
        if args.tau.is_none() && problem.c_inf() > 0.0 {
            let c2 = problem.c_inf().powi(2);
            cfg.tau = if alg == Algorithm::Pame { eta / (2.0 * c2) } else { eta / c2 };
        }
    }
    if let Some(tau) = args.tau {
        cfg.tau = tau;
    }
    if let Some(theta) = args.theta {
        cfg.theta = theta;
    }
    cfg.lipschitz = args.lipschitz;
    cfg.max_iters = args.max_iters;
    cfg.trace_every = args.trace_every;
    cfg.stop_on_residuals = !args.no_stop;
    cfg.validate()?;
    Ok(cfg)
}

fn solve_one(args: &RunArgs, problem: &Problem, alg: Algorithm) -> Result<SolveResult<f64>, Failure> {
    let cfg = solver_config(args, problem, alg)?;
    log::info!("{alg}: eta {:e}, tau {:e}, max_iters {}", cfg.eta, cfg.tau, cfg.max_iters);
    Ok(eot::solve(alg, problem, &cfg)?)
}

#[derive(Serialize)]
struct RunSummary {
    algorithm: String,
    iterations: usize,
    termination: String,
    primal_value: f64,
    gap: Option<f64>,
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let algs = parse_algorithms(&args.algorithms)?;
    let problem = load_problem(&args.instance, &args.data)?;
    let configs: Vec<SolverConfig<f64>> = algs.iter().map(|&a| solver_config(args, &problem, a)).collect::<Result<_, _>>()?;
    let results: Vec<SolveResult<f64>> = if args.parallel {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(t) = args.threads {
            pool = pool.num_threads(t);
        }
        let pool = pool.build().map_err(|e| Failure::config(format!("thread pool: {e}")))?;
        pool.install(|| algs.par_iter().map(|&a| solve_one(args, &problem, a)).collect::<Result<_, _>>())?
    } else {
        algs.iter().map(|&a| solve_one(args, &problem, a)).collect::<Result<_, _>>()?
    };

    let out = &args.out;
    let mut summaries = Vec::new();
    for (res, cfg) in results.iter().zip(&configs) {
        let name = res.algorithm.name();
        format::write(&out.join(format!("{name}_trace.csv")), &format::trace_csv(res, problem.agents()))?;
        if !args.no_plan {
            format::write(&out.join(format!("{name}_plan.json")), &format::plan_to_string(res))?;
        }
        let gap = if args.no_gap {
            None
        } else {
            let report = eot::duality_gap(&res.plan, &res.lambda_hat, &problem)?;
            let doc = GapDoc::new(&report, cfg.epsilon);
            format::write(&out.join(format!("{name}_gap.json")), &doc.to_json())?;
            Some(report.gap)
        };
        summaries.push(RunSummary {
            algorithm: name.into(),
            iterations: res.iterations,
            termination: format!("{:?}", res.termination),
            primal_value: res.primal_value(&problem),
            gap,
        });
    }
    if args.svg {
        let mut cfg = solver_config(args, &problem, Algorithm::Pam)?;
        cfg.max_iters = args.reference_iters.max(1);
        cfg.trace_every = cfg.max_iters;
        cfg.stop_on_residuals = false;
        let reference = eot::solve(Algorithm::Pam, &problem, &cfg)?;
        let ell_star = reference.trace.last().map_or(0.0, |r| r.lagrangian);
        let series: Vec<svg::Series> = results
            .iter()
            .map(|r| svg::Series {
                label: r.algorithm.name().to_uppercase(),
                points: r.trace.iter().map(|t| (t.time_ms, (t.lagrangian - ell_star).abs())).collect(),
            })
            .collect();
        format::write(&out.join("error.svg"), &svg::error_plot(&series))?;
    }
    emit(&serde_json::to_string_pretty(&summaries).expect("summary serializes"));
    Ok(())
}

fn cmd_certify(args: &CertifyArgs) -> Result<bool, Failure> {
    let problem = format::load_instance(&args.instance)?;
    let (plans, plan_lambda) = format::load_plan(&args.plan, &problem)?;
    let lambda = match &args.lambda {
        Some(path) => format::load_lambda(path)?,
        None => plan_lambda,
    };
    let report = eot::duality_gap(&plans, &lambda, &problem).map_err(|e| match e {
        eot::EotError::InfeasibleInput { residual } => {
            let (row, col) = eot::kernels::marginal_residual(&plans, &problem);
            let negative = plans.pi().iter().filter(|&&x| x < 0.0).count();
            Failure::config(format!(
                "plan is not a feasible coupling: residual {residual:e} (rows {row:e}, columns {col:e}), {negative} negative entries"
            ))
        }
        other => Failure::from(other),
    })?;
    let doc = GapDoc::new(&report, args.epsilon);
    emit(doc.to_json().trim_end());
    Ok(doc.certified)
}

fn cmd_gen(args: &GenArgs) -> Result<(), Failure> {
    let spec = args.data.spec()?.ok_or_else(|| Failure::config("--dataset is required"))?;
    let problem: Problem = eot::generate(&spec)?;
    format::write(&args.out, &format::instance_to_string(&problem))
}

#[derive(Serialize)]
struct OracleDoc {
    value: f64,
    error_bound: f64,
    dual_value: f64,
    lambda: Vec<f64>,
    plans: Vec<Vec<Vec<f64>>>,
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), Failure> {
    let problem = format::load_instance(&args.instance)?;
    let grid = GridSpec { resolution: args.resolution, refine: args.refine, ..GridSpec::default() };
    let o = eot::brute_saddle(&problem, &grid)?;
    let plans = o.plans.pi().outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect();
    let doc = OracleDoc { value: o.value, error_bound: o.error_bound, dual_value: o.dual_value, lambda: o.lambda, plans };
    emit(&serde_json::to_string_pretty(&doc).expect("oracle serializes"));
    Ok(())
}

/// Prints to standard output, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn report(result: Result<(), Failure>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => report(cmd_run(args)),
        Command::Certify(args) => match cmd_certify(args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(f) => report(Err(f)),
        },
        Command::Gen(args) => report(cmd_gen(args)),
        Command::Oracle(args) => report(cmd_oracle(args)),
    }
}
