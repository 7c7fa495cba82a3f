use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gheat::cli::{self, CliError, RunConfig};
use gheat::oracles::OracleMethod;

/// Solver for the one-dimensional G-heat equation.
///
/// Set GHEAT_THREADS to cap the worker threads used by `refine`.
#[derive(Debug, Parser)]
#[command(name = "gheat", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// March the configured problem to t = T.
    Solve { config: PathBuf },
    /// Nonlinear solution next to the linear one at sigma_high and the Gaussian closed form.
    Compare { config: PathBuf },
    /// Grid refinement study at the first probe point.
    Refine {
        config: PathBuf,
        /// Comma-separated levels, e.g. 400x100,800x200,1600x400
        #[arg(long)]
        levels: String,
    },
    /// Evaluate an independent reference solution.
    Oracle {
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Gaussian,
    Explicit,
    Dp,
}

impl From<Method> for OracleMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Gaussian => Self::Gaussian,
            Method::Explicit => Self::Explicit,
            Method::Dp => Self::Dp,
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("GHEAT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(args: Args) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match args.command {
        Command::Solve { config } => cli::cmd_solve(&RunConfig::load(&config)?, &mut stdout),
        Command::Compare { config } => cli::cmd_compare(&RunConfig::load(&config)?, &mut stdout),
        Command::Refine { config, levels } => {
            let levels = cli::parse_levels(&levels)?;
            cli::cmd_refine(&RunConfig::load(&config)?, &levels, &mut stdout)
        }
        Command::Oracle { config, method } => {
            cli::cmd_oracle(&RunConfig::load(&config)?, method.into(), &mut stdout)
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gheat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
