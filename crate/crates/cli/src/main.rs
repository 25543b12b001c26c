//! `echotime`: build and cache models, run time-reversal experiments and
//! sweeps, and write the CSV artifacts.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "echotime", version, about = "Time-reversal experiments on a quantized 2D well")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; also holds the model caches.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for sweeps (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Added to the realization seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Diagonalize the reference Hamiltonian and cache the windowed model.
    Build,
    /// Derive the sign-randomized model from the cached physical model.
    ErmtDerive,
    /// Run one experiment: trace.csv, trace_mean.csv, result.csv.
    Run,
    /// Run the [sweep] grid: results.csv, scaling.csv.
    Sweep,
    /// P(t1, t2) over [0, T]^2 for the first realization: surface.csv.
    Surface,
    /// Rebuild scaling.csv and λ* from an existing results.csv.
    Analyze,
    /// Print the commented default config.
    ConfigReference,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Partial(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Partial(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Partial(m) | CliError::Io(m) => m,
        }
    }
}

impl From<echotime_core::Error> for CliError {
    fn from(e: echotime_core::Error) -> Self {
        match e {
            echotime_core::Error::Io(io) => CliError::Io(io.to_string()),
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Format::Csv = cli.format;
    let ctx = commands::Context {
        out: cli.out,
        workers: cli
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1),
    };
    let res = match cli.command {
        Command::ConfigReference => {
            print!("{}", config::REFERENCE);
            Ok(())
        }
        cmd => config::load(cli.config.as_deref(), cli.seed_offset).and_then(|cfg| match cmd {
            Command::Build => commands::build(&ctx, &cfg),
            Command::ErmtDerive => commands::ermt_derive(&ctx, &cfg),
            Command::Run => commands::run(&ctx, &cfg),
            Command::Sweep => commands::sweep(&ctx, &cfg),
            Command::Surface => commands::surface(&ctx, &cfg),
            Command::Analyze => commands::analyze(&ctx, &cfg),
            Command::ConfigReference => unreachable!(),
        }),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
