//! Command-line surface: scenario runs, sweeps, diagnostics, comparisons,
//! and preset management.
//!
//! Exit codes: 0 on success, 2 on invariant violations (including strict
//! mode escalating warnings), 3 on invalid configuration.

mod config;
mod emit;
mod presets;
mod run;

use clap::{Parser, Subcommand};
use config::Scenario;
use run::{Ctx, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "oralab",
    about = "Barrier solvers and particle simulators for heat flow with order-respecting absorption",
    version
)]
struct Cli {
    /// Scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for tables and the manifest.
    #[arg(long, global = true, default_value = "runs/out")]
    out_dir: PathBuf,

    /// Override the configured simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweep cells (defaults to the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Treat warnings as errors.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the boundary-removal barriers for the configured sweep.
    SolveRab,
    /// Solve the quantile-removal barriers for the configured sweep.
    SolveRaq,
    /// Simulate the boundary-removal particle system.
    SimulateRab,
    /// Simulate the quantile-removal particle system.
    SimulateRaq,
    /// Solve with full detail and emit absorption-order and reflection-map
    /// diagnostics.
    CheckOra,
    /// Compare solver output against simulations, paired clocks, or the
    /// twin model.
    Compare,
    /// Run the full solver-and-simulation sweep.
    Sweep,
    /// List available presets or write one out.
    Presets {
        /// Preset to materialize.
        #[arg(long)]
        name: Option<String>,
        /// Where to write the preset configuration.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

fn load_scenario(cli: &Cli) -> Result<(Scenario, Vec<u8>), RunError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        run::RunError::Config(config::ConfigError(
            "this subcommand needs --config <file>".into(),
        ))
    })?;
    let bytes = std::fs::read(path).map_err(|e| {
        run::RunError::Config(config::ConfigError(format!(
            "cannot read {}: {e}",
            path.display()
        )))
    })?;
    let scenario = Scenario::from_json(&bytes).map_err(RunError::Config)?;
    Ok((scenario, bytes))
}

fn expect_model(scenario: &Scenario, model: config::Model) -> Result<(), RunError> {
    if scenario.model != model {
        return Err(RunError::Config(config::ConfigError(format!(
            "subcommand expects a {model:?} scenario, config says {:?}",
            scenario.model
        ))));
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), RunError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .ok();
    }
    if let Command::Presets { name, write } = &cli.command {
        match name {
            None => {
                for n in presets::preset_names() {
                    println!("{n}");
                }
            }
            Some(n) => {
                let s = presets::preset(n).ok_or_else(|| {
                    RunError::Config(config::ConfigError(format!("unknown preset {n}")))
                })?;
                let text = serde_json::to_string_pretty(&s).expect("presets serialize");
                match write {
                    Some(path) => std::fs::write(path, text + "\n").map_err(RunError::Io)?,
                    None => println!("{text}"),
                }
            }
        }
        return Ok(());
    }

    let (scenario, bytes) = load_scenario(cli)?;
    let seed = cli.seed.unwrap_or(scenario.simulation.seed);
    let ctx = Ctx {
        scenario: &scenario,
        config_bytes: &bytes,
        out_dir: &cli.out_dir,
        seed,
        strict: cli.strict,
    };
    match cli.command {
        Command::SolveRab => {
            expect_model(&scenario, config::Model::Rab)?;
            run::run_solve(&ctx)
        }
        Command::SolveRaq => {
            expect_model(&scenario, config::Model::Raq)?;
            run::run_solve(&ctx)
        }
        Command::SimulateRab => {
            expect_model(&scenario, config::Model::Rab)?;
            run::run_simulate(&ctx)
        }
        Command::SimulateRaq => {
            expect_model(&scenario, config::Model::Raq)?;
            run::run_simulate(&ctx)
        }
        Command::CheckOra => run::run_check_ora(&ctx),
        Command::Compare => run::run_compare(&ctx),
        Command::Sweep => run::run_sweep(&ctx),
        Command::Presets { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
