//! Configuration-driven front end for fmlab experiments.
//!
//! Every command reads one JSON config, writes its artifacts under the output
//! directory and reports a single-line JSON status. Exit codes: 0 pass,
//! 1 violation found, 2 configuration error, 3 numeric failure.

pub mod commands;
pub mod config;
pub mod repro;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Parser)]
#[command(
    name = "fmlab",
    version,
    about = "Fading-memory experiments on sampled input-driven systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports and CSV artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces the seeds found in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only warnings and errors on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one model under one input.
    Simulate,
    /// Falsify a fading-memory certificate on a random ensemble.
    Fm,
    /// Fit the largest exponential kernel rate that certifies the ensemble.
    KernelFit,
    /// Input-mismatch budget for an output target, optionally checked on pairs.
    Budget,
    /// Converging-input probe.
    Cico,
    /// Periodic-input probe.
    Pipo,
    /// Sampled incremental Lyapunov check.
    IssSample,
    /// Train a filter-bank cascade on a target model.
    ApproxTrain,
    /// Evaluate a trained cascade.
    ApproxEval,
    /// Run the canned experiments and write a summary table.
    Repro,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fm => "fm",
            Command::KernelFit => "kernel-fit",
            Command::Budget => "budget",
            Command::Cico => "cico",
            Command::Pipo => "pipo",
            Command::IssSample => "iss-sample",
            Command::ApproxTrain => "approx-train",
            Command::ApproxEval => "approx-eval",
            Command::Repro => "repro",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<fmlab::Error> for CliError {
    fn from(e: fmlab::Error) -> Self {
        use fmlab::Error as E;
        match e {
            E::Numeric(_) | E::Divergence { .. } | E::Singular(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io error: {e}"))
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub details: Map<String, Value>,
}

impl Outcome {
    pub fn new(pass: bool) -> Self {
        Outcome {
            pass,
            details: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.details.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(Value::Null),
        );
        self
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// Single-line status for stdout.
pub fn status_line(command: Command, result: &Result<Outcome, CliError>) -> String {
    let mut status = Map::new();
    status.insert("command".into(), command.name().into());
    match result {
        Ok(o) => {
            status.insert("status".into(), if o.pass { "pass" } else { "fail" }.into());
            status.insert("exit_code".into(), o.exit_code().into());
            status.extend(o.details.clone());
        }
        Err(e) => {
            status.insert("status".into(), "error".into());
            status.insert("exit_code".into(), e.exit_code().into());
            status.insert("error".into(), e.to_string().into());
        }
    }
    Value::Object(status).to_string()
}

pub fn exit_code(result: &Result<Outcome, CliError>) -> i32 {
    match result {
        Ok(o) => o.exit_code(),
        Err(e) => e.exit_code(),
    }
}

/// Runs one command; the caller owns logging and thread-pool setup.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(default_out(cli.command)));
    if cli.command == Command::Repro {
        if cli.config.is_some() || cli.seed.is_some() {
            return Err(CliError::Config(
                "repro runs canned configurations; --config and --seed are not accepted".into(),
            ));
        }
        return repro::run(&out);
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{} needs --config", cli.command.name())))?;
    dispatch(cli.command, path, cli.seed, &out)
}

fn default_out(command: Command) -> &'static str {
    match command {
        Command::Repro => "repro",
        _ => ".",
    }
}

fn dispatch(
    command: Command,
    path: &Path,
    seed: Option<u64>,
    out: &Path,
) -> Result<Outcome, CliError> {
    use config::*;
    match command {
        Command::Simulate => commands::simulate(&load::<SimulateConfig>(path, seed)?, out),
        Command::Fm => commands::fm(&load::<FmConfig>(path, seed)?, out),
        Command::KernelFit => commands::kernel_fit(&load::<KernelFitConfig>(path, seed)?, out),
        Command::Budget => commands::budget(&load::<BudgetConfig>(path, seed)?, out),
        Command::Cico => commands::cico(&load::<CicoConfig>(path, seed)?, out),
        Command::Pipo => commands::pipo(&load::<PipoConfig>(path, seed)?, out),
        Command::IssSample => commands::iss_sample(&load::<IssSampleConfig>(path, seed)?, out),
        Command::ApproxTrain => {
            commands::approx_train(&load::<ApproxTrainConfig>(path, seed)?, out)
        }
        Command::ApproxEval => commands::approx_eval(&load::<ApproxEvalConfig>(path, seed)?, out),
        Command::Repro => unreachable!("handled by execute"),
    }
}
