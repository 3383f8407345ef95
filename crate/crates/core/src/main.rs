use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use delin::harness::{
    cmd_certify, cmd_conjugate, cmd_simulate, cmd_sweep, cmd_verify, Config, RunOptions,
};

/// Delay difference equations: simulation, dichotomy certification, and
/// numerically certified conjugacies.
#[derive(Parser)]
#[command(name = "delin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment definition (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    /// Output directory for report.json and tables/*.csv.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the sample count from the config file.
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Suppresses the per-check summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Steps the linear and semilinear flows and writes trajectories.
    Simulate,
    /// Computes the Lipschitz and contraction certificates.
    Certify,
    /// Builds the conjugacy along configured orbits and checks residuals.
    Conjugate,
    /// Runs the full invariant suite.
    Verify,
    /// Sweeps one parameter and tabulates certificates and residuals.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = RunOptions {
        out: cli.out.clone(),
        seed: cli.seed,
        samples: cli.samples,
        quiet: cli.quiet,
    };
    let config = match Config::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Simulate => cmd_simulate(&config, &opts),
        Command::Certify => cmd_certify(&config, &opts),
        Command::Conjugate => cmd_conjugate(&config, &opts),
        Command::Verify => cmd_verify(&config, &opts),
        Command::Sweep => cmd_sweep(&config, &opts),
    };
    match result {
        Ok(report) => {
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
