use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfg_pi::cli::{cmd_compare, cmd_plot, cmd_run, cmd_sweep, CliError, Options, Outcome};

/// Policy iteration experiments for periodic mean field games.
#[derive(Parser)]
#[command(name = "mfg-pi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the system described by a config file.
    Run(SolverArgs),
    /// Repeat a run over a list of coupling strengths.
    Sweep(SolverArgs),
    /// Compare policy iteration with Newton's method from the same start.
    Compare(SolverArgs),
    /// Draw a log-scale chart of a report CSV.
    Plot {
        /// Report file written by `run` or `compare`.
        #[arg(long)]
        report: PathBuf,
        /// Output directory (defaults to the report's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Coupling strength(s), comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    sigma: Option<Vec<f64>>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Seed for randomized validation checks; never affects the solvers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add wall-clock columns to the CSV output.
    #[arg(long)]
    timing: bool,
}

impl SolverArgs {
    fn options(&self) -> Options {
        Options {
            sigma: self.sigma.clone(),
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            timing: self.timing,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<Outcome, CliError> = match &cli.command {
        Command::Run(a) => cmd_run(&a.config, &a.out, &a.options()),
        Command::Sweep(a) => cmd_sweep(&a.config, &a.out, &a.options()),
        Command::Compare(a) => cmd_compare(&a.config, &a.out, &a.options()),
        Command::Plot { report, out } => {
            let dir = out
                .clone()
                .or_else(|| report.parent().map(|p| p.to_path_buf()))
                .unwrap_or_else(|| PathBuf::from("."));
            cmd_plot(report, &dir)
        }
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if outcome.code == 1 {
                eprintln!("warning: stopped at the iteration cap before reaching the tolerance");
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
