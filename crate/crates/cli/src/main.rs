use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nnet_cli::{CliError, ExperimentConfig};
use nnet_core::Exec;

#[derive(Parser)]
#[command(name = "nnet", version, about = "Ergodic control experiments for the two-pool N-network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 picks one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed_base: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Parse and validate the configuration, print the fluid model.
    Validate,
    /// Fluid quantities and finite-n thresholds.
    Fluid,
    /// Solve the configured ergodic control problem on a grid.
    Hjb,
    /// Replicated simulation under the configured policy.
    Simulate,
    /// Exact average-cost oracle on a truncated box.
    Mdp,
    /// Drift checks for the chain, the diffusion and the induced policy.
    Verify,
    /// Concatenated-policy costs against the limiting value and the oracle.
    Optimality,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed_base {
        cfg.seed = s;
    }
    if cli.threads > 0 {
        nnet_core::exec::configure_threads(cli.threads);
    }
    let exec = Exec::default();
    let out = &cli.out;
    match cli.command {
        Command::Validate => print!("{}", nnet_cli::cmd_validate(&cfg)?),
        Command::Fluid => nnet_cli::cmd_fluid(&cfg, out)?,
        Command::Hjb => {
            let o = nnet_cli::cmd_hjb(&cfg, out, exec)?;
            println!("rho = {:?}, residual = {:?}", o.solution.rho, o.solution.report.residual);
        }
        Command::Simulate => {
            let r = nnet_cli::cmd_simulate(&cfg, out, exec)?;
            println!("{} cost rows", r.len());
        }
        Command::Mdp => {
            for r in nnet_cli::cmd_mdp(&cfg, out, exec)? {
                println!("n = {}: rho = {:?}", r.n, r.rho);
            }
        }
        Command::Verify => {
            for r in nnet_cli::cmd_verify(&cfg, out, exec)? {
                println!("{}: pass = {} ({})", r.target, r.pass, r.note);
            }
        }
        Command::Optimality => {
            let r = nnet_cli::cmd_optimality(&cfg, out, exec)?;
            println!("{} convergence rows", r.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
