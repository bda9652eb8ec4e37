use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riemann_cg::checks::{run_checks, CheckScope};
use riemann_cg::experiment::{
    default_output_dir, run_experiment, run_restart_sweep, ExperimentSpec, Format, RunReport,
    X0Spec, DEFAULT_SWEEP_PERIODS,
};
use riemann_cg::{CgConfig, Error, Variant};

const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "riemann-cg",
    version,
    about = "Riemannian Fletcher-Reeves conjugate gradient experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its trace.
    Run(RunArgs),
    /// Run an experiment once per restart period (19, 50, 100 and none).
    Sweep(SweepArgs),
    /// Run the invariant suites and report pass/fail per check.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// peculiar-sphere-20, ortho-sphere-100, brockett-stiefel-4x2 or svd-6x4.
    #[arg(long)]
    preset: String,
    /// fr or scaled-fr.
    #[arg(long, default_value = "scaled-fr")]
    variant: Variant,
    #[arg(long, default_value_t = CgConfig::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = CgConfig::default().grad_tol)]
    grad_tol: f64,
    #[arg(long, default_value_t = CgConfig::default().wolfe.c1)]
    c1: f64,
    #[arg(long, default_value_t = CgConfig::default().wolfe.c2)]
    c2: f64,
    /// paper or random:<seed>.
    #[arg(long, default_value = "paper")]
    x0: X0Spec,
    /// csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    solver: SolverArgs,
    /// Restart period N (beta is reset every N iterations).
    #[arg(long)]
    restart: Option<usize>,
    /// Trace file; defaults to <output dir>/<run name>.<format>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for the per-period traces.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// all, geometry, solver or probe.
    #[arg(long, default_value = "all")]
    scope: CheckScope,
    /// Random instances per geometry check.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn base_spec(args: &SolverArgs) -> ExperimentSpec {
    ExperimentSpec {
        max_iter: args.max_iter,
        grad_tol: args.grad_tol,
        c1: args.c1,
        c2: args.c2,
        x0: args.x0,
        format: args.format,
        ..ExperimentSpec::new(&args.preset, args.variant)
    }
}

fn usage_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_SOLVER
    })
}

fn report_runs(reports: &[RunReport]) -> ExitCode {
    let mut failed = false;
    for report in reports {
        println!("{}", report.summary);
        if let Some(path) = &report.summary.out {
            println!("  trace: {}", path.display());
        }
        failed |= !report.succeeded();
    }
    if failed {
        ExitCode::from(EXIT_SOLVER)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(args: RunArgs) -> ExitCode {
    let mut spec = base_spec(&args.solver);
    spec.restart_period = args.restart;
    spec.out = Some(args.out.unwrap_or_else(|| {
        default_output_dir().join(format!("{}.{}", spec.name(), spec.format.extension()))
    }));
    match run_experiment(&spec) {
        Ok(report) => report_runs(&[report]),
        Err(e) => usage_error(&e),
    }
}

fn sweep(args: SweepArgs) -> ExitCode {
    let spec = base_spec(&args.solver);
    let dir = args.out.unwrap_or_else(default_output_dir);
    match run_restart_sweep(&spec, &DEFAULT_SWEEP_PERIODS, Some(&dir)) {
        Ok(reports) => report_runs(&reports),
        Err(e) => usage_error(&e),
    }
}

fn check(args: CheckArgs) -> ExitCode {
    let report = run_checks(args.scope, args.samples, args.seed);
    if args.json {
        match serde_json::to_string_pretty(&report) {
            Ok(s) => println!("{s}"),
            Err(e) => return usage_error(&e.into()),
        }
    } else {
        for result in &report.results {
            println!("{result}");
        }
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Check(args) => check(args),
    }
}
