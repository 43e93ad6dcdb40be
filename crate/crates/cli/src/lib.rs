//! Experiment harness for the `l0rcd` solvers: instance loading, solver runs,
//! minima enumeration, tournaments, benchmarks and gradient checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::LoadedConfig;
use crate::error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "l0rcd", version, about = "Coordinate descent hard thresholding for l0-regularized problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = "l0rcd-out")]
    pub out: PathBuf,
    /// Use the built-in 4 x 7 least-squares instance (enumerate only).
    #[arg(long, global = true)]
    pub example2: bool,
    /// Omit the timestamp line from outputs.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run one solver on one instance.
    Solve,
    /// Enumerate all supports and classify the local minimizers.
    Enumerate,
    /// Count runs reaching the global optimum over a penalty sweep.
    Tournament,
    /// Best-of-trials objective, sparsity and iteration counts per solver.
    Benchmark,
    /// Finite-difference, cache-coherence and descent checks.
    Gradcheck,
}

fn build_context(cli: &Cli) -> Result<Context, CliError> {
    if cli.example2 && cli.command != Command::Enumerate {
        return Err(CliError::Config("--example2 is only valid with `enumerate`".into()));
    }
    let mut config = cli.config.as_deref().map(LoadedConfig::from_path).transpose()?;
    if let (Some(c), Some(seed)) = (config.as_mut(), cli.seed) {
        c.config.seed = seed;
    }
    Ok(Context {
        config,
        out_dir: cli.out.clone(),
        example2: cli.example2,
        timestamp: !cli.no_timestamp,
    })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let result = build_context(&cli).and_then(|ctx| match cli.command {
        Command::Solve => commands::solve(&ctx, out),
        Command::Enumerate => commands::enumerate(&ctx, out),
        Command::Tournament => commands::tournament(&ctx, out),
        Command::Benchmark => commands::benchmark(&ctx, out),
        Command::Gradcheck => commands::gradcheck(&ctx, out),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
