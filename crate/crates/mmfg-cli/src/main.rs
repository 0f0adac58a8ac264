//! `mmfg` — command-line driver for the major/minor mean field game solver.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, config, or model
//! selection), 2 non-convergence or failed verification, 3 I/O failure.
//! Every failure prints one machine-readable JSON object to stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod config;
mod plot;
mod run;

use config::RunConfig;
use run::{CliError, CommandKind};

#[derive(Parser)]
#[command(
    name = "mmfg",
    version,
    about = "Particle solver for major/minor mean field games",
    subcommand_negates_reqs = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Path to a flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override both solver.seed and game.seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Directory artifacts are written into (created when missing).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    output: PathBuf,

    /// Print the effective configuration (defaults merged with --config) and exit.
    #[arg(long, global = true)]
    print_defaults: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean field game and export the equilibrium bundle.
    SolveMfg,
    /// Solve, then compare the major action path against the model's closed form.
    VerifyExample {
        /// Model to verify; overrides the config's model.name.
        model: Option<String>,
    },
    /// Integrate the reduced deterministic mean-field system.
    MeanFieldOde,
    /// Simulate the finite N-player game from an exported bundle.
    FiniteGame,
    /// Estimate the epsilon-Nash gap of an exported bundle.
    NashGap,
}

impl From<&Command> for CommandKind {
    fn from(c: &Command) -> Self {
        match c {
            Command::SolveMfg => CommandKind::SolveMfg,
            Command::VerifyExample { model } => {
                CommandKind::VerifyExample { model: model.clone() }
            }
            Command::MeanFieldOde => CommandKind::MeanFieldOde,
            Command::FiniteGame => CommandKind::FiniteGame,
            Command::NashGap => CommandKind::NashGap,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
        cfg.game.seed = seed;
    }
    Ok(cfg)
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(u8::try_from(err.exit_code()).unwrap_or(1))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion)
                || e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.to_string())),
    };

    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    if cli.print_defaults {
        print!("{}", cfg.render());
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        return fail(&CliError::Usage(
            "a subcommand is required: solve-mfg | verify-example | mean-field-ode | \
             finite-game | nash-gap (see --help)"
                .into(),
        ));
    };
    match run::execute(&CommandKind::from(command), &cfg, &cli.output) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
