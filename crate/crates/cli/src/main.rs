//! `mmh`: validate, solve, simulate and diagnose regime-switching Heston
//! investment problems described by a config file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mmh", version, about = "Optimal investment in regime-switching Heston markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum XiArg {
    Ode,
    Mc,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Feller condition and the solvability inequalities.
    Validate { config: PathBuf },
    /// Tabulate value function, regime expectation and optimal strategy.
    Solve {
        config: PathBuf,
        /// Number of time intervals on [0, T].
        #[arg(long, default_value_t = 50)]
        t_grid: usize,
        #[arg(long, value_enum, default_value_t = XiArg::Ode)]
        xi_method: XiArg,
        /// Output CSV (standard output if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate terminal wealth and report expected utility and a histogram.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps_per_year: Option<usize>,
        /// `optimal` or `const:<weight>`.
        #[arg(long, default_value = "optimal")]
        strategy: String,
        /// Expected-utility CSV (standard output if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Histogram CSV; defaults to `<out>` with a `_hist` suffix.
        #[arg(long)]
        hist_out: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Terminal wealth at and above which paths go to the overflow bar
        /// (default 10 v0).
        #[arg(long)]
        overflow_at: Option<f64>,
        /// Also write every path to this binary file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Closed-form value against full simulation at the initial point.
    Compare {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps_per_year: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean of the value function along simulated paths at checkpoints.
    Diagnose {
        config: PathBuf,
        /// Comma-separated times (default 0, 1, ..., T).
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<f64>>,
        #[arg(long, default_value = "optimal")]
        strategy: String,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps_per_year: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => commands::validate(&config),
        Command::Solve {
            config,
            t_grid,
            xi_method,
            out,
        } => commands::solve(&config, t_grid, xi_method, out.as_deref()),
        Command::Simulate {
            config,
            paths,
            steps_per_year,
            strategy,
            out,
            hist_out,
            bins,
            overflow_at,
            dump,
        } => commands::simulate(&commands::SimulateArgs {
            config,
            paths,
            steps_per_year,
            strategy,
            out,
            hist_out,
            bins,
            overflow_at,
            dump,
        }),
        Command::Compare {
            config,
            paths,
            steps_per_year,
            out,
        } => commands::compare(&config, paths, steps_per_year, out.as_deref()),
        Command::Diagnose {
            config,
            checkpoints,
            strategy,
            paths,
            steps_per_year,
            out,
        } => commands::diagnose(&config, checkpoints, &strategy, paths, steps_per_year, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
