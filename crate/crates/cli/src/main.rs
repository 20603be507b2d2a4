use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

mod bifset;
mod commands;
mod config;
mod output;

#[derive(Parser, Debug)]
#[command(name = "lorenz-tz", version, about = "Bifurcation analysis of the Lorenz triple-zero unfolding")]
struct Cli {
    /// TOML (or JSON) file with a `[model]` table and one table per command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Output file; standard output when absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for commands that fan out.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Model parameters. `eps2`, `B` and `D` default to -1, -0.1 and 0.01.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub eps1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps3: Option<f64>,
    #[arg(long = "B", allow_negative_numbers = true)]
    #[serde(rename = "B")]
    pub b: Option<f64>,
    #[arg(long = "D", allow_negative_numbers = true)]
    #[serde(rename = "D")]
    pub d: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibria, spectra and local bifurcation labels.
    Equilibria {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        opts: commands::EquilibriaOpts,
    },
    /// Bifurcation curves and markers in a window of the (eps1, eps3) plane.
    BifurcationSet {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        opts: bifset::BifsetOpts,
    },
    /// A trajectory sampled on a uniform grid.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        opts: commands::SimulateOpts,
    },
    /// Largest Lyapunov exponent with its standard error.
    Lyapunov {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        opts: commands::LyapunovOpts,
    },
    /// Locate a connection in one parameter, optionally continue it in two.
    Connect {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        opts: commands::ConnectOpts,
    },
    /// T-point heteroclinic loop between E2 and E3 by Newton in (eps1, eps3).
    Tpoint {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        opts: commands::TpointOpts,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(lorenz_tz::Error),
    Io(std::io::Error),
    /// Some parts failed after the others were written.
    Partial(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Numerical(e) => write!(f, "numerical failure: {e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::Partial(m) => write!(f, "{m}"),
        }
    }
}

impl From<lorenz_tz::Error> for CliError {
    fn from(e: lorenz_tz::Error) -> Self {
        Self::Numerical(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Numerical(_) | Self::Io(_) | Self::Partial(_) => 1,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = config::ConfigFile::load(cli.config.as_deref())?;
    let format = cli.format.or(file.format).unwrap_or_default();
    let jobs = cli.jobs.or(file.jobs).unwrap_or(1);
    let out = output::Sink::new(cli.output.clone(), format);
    match cli.command {
        Command::Equilibria { model, opts } => {
            let (model, opts) = file.resolve("equilibria", &model, &opts)?;
            commands::equilibria(&model, &opts.with_defaults(), &out)
        }
        Command::BifurcationSet { model, opts } => {
            let (model, opts) = file.resolve("bifurcation-set", &model, &opts)?;
            bifset::run(&model, &opts.with_defaults(), jobs, format)
        }
        Command::Simulate { model, opts } => {
            let (model, opts) = file.resolve("simulate", &model, &opts)?;
            commands::simulate(&model, &opts.with_defaults(), &out)
        }
        Command::Lyapunov { model, opts } => {
            let (model, opts) = file.resolve("lyapunov", &model, &opts)?;
            commands::lyapunov(&model, &opts.with_defaults(), &out)
        }
        Command::Connect { model, opts } => {
            let (model, opts) = file.resolve("connect", &model, &opts)?;
            commands::connect(&model, &opts.with_defaults(), &out)
        }
        Command::Tpoint { model, opts } => {
            let (model, opts) = file.resolve("tpoint", &model, &opts)?;
            commands::tpoint(&model, &opts.with_defaults(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lorenz-tz: {e}");
            ExitCode::from(e.code())
        }
    }
}
