//! `hcalab`: config-driven experiment runner for the tabular
//! advantage-estimator laboratory.
//!
//! Subcommands: `run` (compute analyses into report/CSV files), `verify`
//! (one-shot identity gate over an instance suite), `validate` (check an
//! MDP JSON document), `oracle` (dump the exact quantities for an MDP).
//!
//! Exit codes: 0 success, 2 schema violation, 3 enumeration cap
//! exceeded, 4 invariant failure. Errors emit one machine-parsable JSON
//! line on stderr.

mod config;
mod error;
mod oracle_cmd;
mod runner;
mod verify;

use clap::{Parser, Subcommand};
use error::CliError;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hcalab", version, about = "Tabular advantage-estimator laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Where to write report.json, CSVs, and manifest.json
        /// (overrides the config's output_dir).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the sample count of sampled mode.
        #[arg(long)]
        samples: Option<usize>,
        /// Override the sampling seed of sampled mode.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the identity gate over a configured instance suite.
    Verify {
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Validate an MDP JSON document and print the violation report.
    Validate { mdp: PathBuf },
    /// Compute and dump the exact oracle quantities for an MDP.
    Oracle {
        mdp: PathBuf,
        /// Policy JSON (`{"probs": [[...]]}`); uniform when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Lookahead depth for the k-step tables (default: the horizon).
        #[arg(long)]
        n_steps: Option<usize>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("{}", err.stderr_record());
            std::process::exit(err.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, output_dir, samples, seed, workers } => {
            init_workers(workers)?;
            runner::run(&config, runner::RunOverrides { output_dir, samples, seed })
        }
        Command::Verify { config, workers } => {
            init_workers(workers)?;
            verify::verify(&config)
        }
        Command::Validate { mdp } => validate(&mdp),
        Command::Oracle { mdp, policy, n_steps, output } => {
            oracle_cmd::oracle(&mdp, policy.as_deref(), n_steps, output.as_deref())
        }
    }
}

fn init_workers(workers: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Schema("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn validate(path: &std::path::Path) -> Result<(), CliError> {
    let mdp = hcalab_core::mdp::load_mdp_unchecked(path)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let report = mdp.validate();
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Other(e.to_string()))?;
    println!("{text}");
    if report.is_valid() {
        Ok(())
    } else {
        Err(CliError::Schema(format!(
            "{}: {} violation(s)",
            path.display(),
            report.violations.len()
        )))
    }
}
