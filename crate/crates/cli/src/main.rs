//! `ldplab` command-line front end.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use schemars::{schema_for, JsonSchema};

use output::CliError;

#[derive(Parser)]
#[command(name = "ldplab", version, about = "Large deviations for population jump processes with boundaries")]
struct Cli {
    /// Worker threads for ensembles and optimisers (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the JSON schema of the configuration and exit.
    #[arg(long)]
    schema: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Model utilities.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Exact stochastic simulation.
    Simulate(ConfigArgs),
    /// Law-of-large-numbers deviations against the zero-cost flow.
    Lln(ConfigArgs),
    /// Action of a piecewise-linear path.
    Action(ConfigArgs),
    /// Minimum-action path between two states.
    Minpath(ConfigArgs),
    /// Zero-cost or controlled flow.
    Flow(ConfigArgs),
    /// Lagrangian values at a state.
    Legendre(ConfigArgs),
    /// Exact or Monte Carlo large-deviation rates.
    LdpRate(ConfigArgs),
    /// Numerical probes of the comparison conditions.
    Check {
        #[command(subcommand)]
        command: CheckCommand,
    },
    /// One-dimensional resolvent solver.
    Hj {
        #[command(subcommand)]
        command: HjCommand,
    },
    /// Demonstrations.
    Demo {
        #[command(subcommand)]
        command: DemoCommand,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Parse, probe rates and check boundary consistency.
    Validate {
        /// Model specification file.
        #[arg(long, conflicts_with = "builtin")]
        config: Option<PathBuf>,
        /// Name of a bundled model.
        #[arg(long)]
        builtin: Option<String>,
        #[arg(long)]
        schema: bool,
    },
}

#[derive(Subcommand)]
enum CheckCommand {
    Conditions(ConfigArgs),
}

#[derive(Subcommand)]
enum HjCommand {
    Solve(ConfigArgs),
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Pure-birth process started at 0.
    YuleFailure(ConfigArgs),
}

fn print_schema<T: JsonSchema>() -> Result<Vec<PathBuf>, CliError> {
    let s = serde_json::to_string_pretty(&schema_for!(T)).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{s}");
    Ok(vec![])
}

fn with_config<T: JsonSchema>(
    a: &ConfigArgs,
    out: &Path,
    run: fn(&Path, &Path) -> Result<Vec<PathBuf>, CliError>,
) -> Result<Vec<PathBuf>, CliError> {
    if a.schema {
        return print_schema::<T>();
    }
    match &a.config {
        Some(p) => run(p, out),
        None => Err(CliError::Validation("--config is required".into())),
    }
}

fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    use commands as c;
    use config as k;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Model { command: ModelCommand::Validate { config, builtin, schema } } => {
            if *schema {
                return print_schema::<serde_json::Value>();
            }
            c::model_validate(config.as_deref(), builtin.as_deref(), out)
        }
        Command::Simulate(a) => with_config::<k::SimulateConfig>(a, out, c::simulate),
        Command::Lln(a) => with_config::<k::LlnConfig>(a, out, c::lln),
        Command::Action(a) => with_config::<k::ActionConfig>(a, out, c::action_cmd),
        Command::Minpath(a) => with_config::<k::MinpathConfig>(a, out, c::minpath),
        Command::Flow(a) => with_config::<k::FlowConfig>(a, out, c::flow),
        Command::Legendre(a) => with_config::<k::LegendreConfig>(a, out, c::legendre),
        Command::LdpRate(a) => with_config::<k::LdpRateConfig>(a, out, c::ldp_rate),
        Command::Check { command: CheckCommand::Conditions(a) } => {
            with_config::<k::ConditionsConfig>(a, out, c::check_conditions)
        }
        Command::Hj { command: HjCommand::Solve(a) } => with_config::<k::HjConfig>(a, out, c::hj_solve),
        Command::Demo { command: DemoCommand::YuleFailure(a) } => {
            if a.schema {
                return print_schema::<k::DemoConfig>();
            }
            c::demo_yule_failure(a.config.as_deref(), out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
