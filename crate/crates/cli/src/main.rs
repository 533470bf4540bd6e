//! `lsdp`: compatibility tests, sweeps, benchmarks and realizations from the command line.
//!
//! Exit codes: 0 feasible (or success), 2 certified infeasible, 3 undecided,
//! 1 malformed input or failed verification.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lsdp_core::sdp::{SolverChoice, Tolerances};

#[derive(Parser)]
#[command(name = "lsdp", version, about = "Semidefinite compatibility tests for latent causal structures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test one covariance (or distribution) against a structure.
    Test(TestArgs),
    /// Evaluate the depolarized correlated family on a grid of noise levels.
    Sweep(SweepArgs),
    /// Run the three-spin rejection-rate benchmark.
    Bench(BenchArgs),
    /// Turn a feasible report into an explicit latent model.
    Realize(RealizeArgs),
    /// Locate the entropic transition of the three-observable family for a range of alphabet sizes.
    Crossover(CrossoverArgs),
    /// Write the depolarized correlated family as a pmf or covariance file.
    Family(FamilyArgs),
}

#[derive(Args, Clone, Copy)]
struct TolArgs {
    /// Relative residual accepted as feasible.
    #[arg(long, env = "LSDP_FEAS", default_value_t = Tolerances::default().feas)]
    feas: f64,
    /// Allowed negativity of a witness's compressed blocks.
    #[arg(long, env = "LSDP_PSD", default_value_t = Tolerances::default().psd)]
    psd: f64,
    /// Required separation of a witness.
    #[arg(long, env = "LSDP_GAP", default_value_t = Tolerances::default().gap)]
    gap: f64,
    #[arg(long, env = "LSDP_MAX_ITER", default_value_t = Tolerances::default().max_iter)]
    max_iter: usize,
    #[arg(long, env = "LSDP_SOLVER", value_enum, default_value_t = Solver::Auto)]
    solver: Solver,
}

#[derive(ValueEnum, Clone, Copy)]
enum Solver {
    Auto,
    Dykstra,
    InteriorPoint,
}

impl TolArgs {
    fn tolerances(self) -> Tolerances {
        Tolerances {
            feas: self.feas,
            psd: self.psd,
            gap: self.gap,
            max_iter: self.max_iter,
            solver: match self.solver {
                Solver::Auto => SolverChoice::Auto,
                Solver::Dykstra => SolverChoice::Dykstra,
                Solver::InteriorPoint => SolverChoice::InteriorPoint,
            },
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// Block covariance JSON.
    #[arg(long, conflicts_with = "dist", required_unless_present = "dist")]
    cov: Option<PathBuf>,
    /// Joint pmf JSON; converted with --feature maps or orthonormal ones.
    #[arg(long)]
    dist: Option<PathBuf>,
    #[arg(long, requires = "dist")]
    feature: Option<PathBuf>,
    /// Structure JSON.
    #[arg(long)]
    dag: PathBuf,
    #[command(flatten)]
    tol: TolArgs,
    /// Include the separating matrix in the report.
    #[arg(long)]
    emit_witness: bool,
    /// Include the decomposition in the report (needed by `realize`).
    #[arg(long)]
    emit_decomposition: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Number of observables.
    #[arg(long = "M", alias = "m", default_value_t = 3)]
    m: usize,
    /// Alphabet size.
    #[arg(long = "D", alias = "d", default_value_t = 2)]
    d: usize,
    /// Structure JSON; defaults to the triangle when M = 3.
    #[arg(long)]
    dag: Option<PathBuf>,
    /// start:stop:step
    #[arg(long, default_value = "0:1:0.01")]
    grid: String,
    /// CSV output; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary with transitions and run metadata.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, env = "LSDP_JOBS")]
    jobs: Option<usize>,
    #[command(flatten)]
    tol: TolArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    instances: u64,
    /// Generated and printed when absent.
    #[arg(long, env = "LSDP_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "LSDP_JOBS")]
    jobs: Option<usize>,
    /// Rate table CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-instance CSV.
    #[arg(long)]
    rows: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    tol: TolArgs,
}

#[derive(Args)]
struct RealizeArgs {
    /// Feasible report written with --emit-decomposition.
    #[arg(long)]
    report: PathBuf,
    /// Generated and printed when absent.
    #[arg(long, env = "LSDP_SEED")]
    seed: Option<u64>,
    /// Model JSON; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossoverArgs {
    #[arg(long, default_value_t = 2)]
    d_min: usize,
    #[arg(long, default_value_t = 40)]
    d_max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "LSDP_JOBS")]
    jobs: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy)]
enum FamilyFormat {
    Pmf,
    Cov,
}

#[derive(Args)]
struct FamilyArgs {
    #[arg(long = "M", alias = "m", default_value_t = 3)]
    m: usize,
    #[arg(long = "D", alias = "d", default_value_t = 2)]
    d: usize,
    #[arg(long)]
    p: f64,
    #[arg(long, value_enum, default_value_t = FamilyFormat::Cov)]
    format: FamilyFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test(a) => commands::test(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Bench(a) => commands::bench(a),
        Command::Realize(a) => commands::realize(a),
        Command::Crossover(a) => commands::crossover(a),
        Command::Family(a) => commands::family(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
