//! Command-line driver for the quantum machine-unlearning laboratory: TOML
//! run configs, experiment drivers and report/manifest emission.

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use qmu_core::Error;

use crate::config::{Experiment, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qmu", version, about = "Quantum machine unlearning laboratory")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate or ingest a dataset and write its snapshot.
    GenData,
    /// Train a PQC classifier.
    Train,
    /// Train, unlearn the forget set and audit against the counterfactual.
    Unlearn,
    /// Train the counterfactual on the retained set only.
    Retrain,
    /// Audit two saved models against the counterfactual.
    Audit,
    /// Federated training with secure aggregation and client unlearning.
    Fed,
    /// Quantum-kernel ridge regression with certified deletion.
    Kernel,
    /// Time gradient, QFIM and SMW operations.
    Bench,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::GenData => Experiment::GenData,
            Command::Train => Experiment::Train,
            Command::Unlearn => Experiment::Unlearn,
            Command::Retrain => Experiment::Retrain,
            Command::Audit => Experiment::Audit,
            Command::Fed => Experiment::Fed,
            Command::Kernel => Experiment::Kernel,
            Command::Bench => Experiment::Bench,
        }
    }
}

/// Exit status for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Invariant(_)
        | Error::NotUnitary(_)
        | Error::NotTracePreserving(_)
        | Error::Singular(_)
        | Error::InvalidState(_) => EXIT_INVARIANT,
        _ => EXIT_VALIDATION,
    }
}

/// Resolves the config, applies flag overrides and runs the command.
pub fn execute(cli: &Cli) -> Result<run::Manifest, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    run::run(cli.command.into(), cfg)
}

/// Entry point shared by the binary and the integration tests.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(m) => {
            for (name, digest) in &m.reports {
                println!("{name} {digest}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
