//! `mrbt`: generate, verify and train with masking reward behavior trees.
//!
//! Exit codes: 0 success, 1 a check failed or a counterexample was found,
//! 2 inconclusive, 3 I/O error, 4 invalid input.

mod commands;
mod config;
mod outdir;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mrbt::gridworld::SpaceError;
use mrbt::pipeline::{GeneratorError, PipelineError, SpecFileError};
use mrbt::trainer::TrainError;
use mrbt::verifier::{ConfigError, DemoError};

use config::CommonArgs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Spec(#[from] SpecFileError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error("invalid verifier settings: {0}")]
    Verify(#[from] ConfigError),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. }
            | CliError::Spec(SpecFileError::Read { .. } | SpecFileError::Write { .. })
            | CliError::Train(TrainError::Io { .. } | TrainError::PolicyFile { .. })
            | CliError::Generator(GeneratorError::Http { .. }) => 3,
            _ => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mrbt", version, about = "Masking reward behavior trees")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an MRBT spec with a generator and refine it against the verifier.
    Generate(commands::GenerateArgs),
    /// Check a spec file against the five formula specifications.
    Verify(commands::VerifyArgs),
    /// Train policies under one or more reward modes.
    Train(commands::TrainArgs),
    /// Evaluate a saved policy.
    Eval(commands::EvalArgs),
    /// Print the size of the tree built for a spec.
    Metrics(commands::MetricsArgs),
    /// Check a spec against expert and random demonstrations.
    DemoTest(commands::DemoTestArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    let result = config::Resolved::new(&cli.common).and_then(|cfg| match &cli.command {
        Command::Generate(a) => commands::generate(&cfg, a),
        Command::Verify(a) => commands::verify(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Metrics(a) => commands::metrics(&cfg, a),
        Command::DemoTest(a) => commands::demo_test(&cfg, a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
