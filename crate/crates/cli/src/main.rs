mod calculus;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plqsqp::sqp::HessianMode;

/// Local SQP for convex piecewise linear-quadratic composite problems.
#[derive(Parser, Debug)]
#[command(name = "plqsqp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run SQP from one start and write the iterate trace and rate report.
    Solve(SolveArgs),
    /// Evaluate the second-order conditions at a KKT point.
    Diagnose(DiagnoseArgs),
    /// Run SQP from many perturbed starts, possibly in several Hessian modes.
    Sweep(SweepArgs),
    /// Randomized checks of prox, subderivatives and projections on a problem.
    CheckCalculus(CalculusArgs),
    /// Write a generated test instance with its known KKT point.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: PathBuf,
    /// Output directory for reports; created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Hessian model: exact, bfgs or identity.
    #[arg(long, default_value = "exact")]
    pub mode: HessianMode,
    /// KKT residual at which iteration stops.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Starting point, comma separated (default: projection of 0 onto Theta).
    #[arg(long)]
    pub x0: Option<String>,
    /// Starting multiplier, comma separated (default: 0).
    #[arg(long)]
    pub lambda0: Option<String>,
    /// Known solution `x;lambda`, or n+m comma separated values. Falls back to
    /// the problem file metadata.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: ProblemArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: ProblemArgs,
    /// Point `x;lambda` to diagnose (default: the metadata reference).
    #[arg(long)]
    pub reference: Option<String>,
    /// Sample count for the sampled checks.
    #[arg(long, default_value_t = 30)]
    pub samples: usize,
    /// Perturbation radii for the calmness estimates.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 1e-3, 1e-4])]
    pub radii: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ProblemArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Hessian modes to sweep; overrides --mode.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<HessianMode>,
    /// Starts per mode.
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    /// Starts are drawn uniformly in this ball around the reference.
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
}

#[derive(Args, Debug)]
pub struct CalculusArgs {
    #[command(flatten)]
    pub common: ProblemArgs,
    /// Random cases per property.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// nlp, elqp, minmax or critical_showcase.
    #[arg(long)]
    pub kind: plqsqp::generate::Kind,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Equality constraints (nlp).
    #[arg(long, default_value_t = 0)]
    pub s: usize,
    #[arg(long, default_value_t = 1.0)]
    pub hess_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub curvature: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b_diag: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (out, result) = match cli.command {
        Command::Solve(a) => (a.common.out.clone(), commands::solve(&a)),
        Command::Diagnose(a) => (a.common.out.clone(), commands::diagnose(&a)),
        Command::Sweep(a) => (a.common.out.clone(), commands::sweep(&a)),
        Command::CheckCalculus(a) => (a.common.out.clone(), commands::check_calculus(&a)),
        Command::Generate(a) => (None, commands::generate(&a)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = commands::exit_code(&e);
            let record = commands::error_record(&e, code);
            eprintln!("{record}");
            if let Some(dir) = out {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
                }
            }
            ExitCode::from(code)
        }
    }
}
