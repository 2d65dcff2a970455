//! `locmt`: one entry point for preprocessing, localization, splitting,
//! scoring, training and evaluation scenarios.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 model-service failure.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "locmt", version, about = "Localize corpora into Arabic dialects and evaluate the resulting models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOptions,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOptions {
    /// Experiment or scenario config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model-service endpoint (`http://host:port` or `mock:<file>`); beats the config file.
    #[arg(long, global = true, env = locmt_core::backend::ENDPOINT_ENV)]
    pub backend: Option<String>,
    /// Seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More progress output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Where run manifests (and run outputs) go.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a corpus (JSONL) or a plain-text file line by line.
    Preprocess(commands::PreprocessArgs),
    /// Localize a labeled corpus into a target dialect.
    Localize(commands::LocalizeArgs),
    /// Split a corpus into seeded, disjoint parts.
    Split(commands::SplitArgs),
    /// Score translations or classifications against references.
    Score(commands::ScoreArgs),
    /// Run a training experiment against the model service.
    Train,
    /// Evaluation scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Run one scenario and write its report.
    Run(commands::ScenarioArgs),
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(std::env::args_os()))
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
