//! `delins`: count subsequences, train the toy scorer, sample, self-check and
//! benchmark the DP.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 verification
//! failure, 3 runtime error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use delins_core::sampler::SamplerError;
use delins_core::scorer::ScorerError;
use delins_core::seq::SeqError;

use crate::config::{BenchSettings, CountSettings, FileConfig, Globals, SampleSettings, TrainSettings, VerifySettings};

#[derive(Parser, Debug)]
#[command(name = "delins", version, about = "Deletion-insertion diffusion over token sequences")]
struct Cli {
    /// TOML config file with top-level `seed`/`threads` and one section per command
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed [default: drawn from entropy and logged]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count occurrences of SUB as a subsequence of SEQ
    Count {
        sub: String,
        seq: String,
        #[command(flatten)]
        settings: CountSettings,
    },
    /// Train the insertion scorer on a corpus
    Train(TrainSettings),
    /// Generate sequences from a checkpoint
    Sample(SampleSettings),
    /// Run the self-check suite against exhaustive enumeration
    Verify(VerifySettings),
    /// Time the DP across sequence lengths and fit a power law
    Bench(BenchSettings),
}

/// Error carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Verify(String),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Verify(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<delins_core::Error> for Failure {
    fn from(e: delins_core::Error) -> Self {
        use delins_core::Error as E;
        let usage = match &e {
            E::Seq(SeqError::Io(_)) => false,
            E::Seq(_) => true,
            E::Scorer(
                ScorerError::Config(_)
                | ScorerError::ShapeMismatch(_)
                | ScorerError::ModeMismatch(_)
                | ScorerError::LengthExceedsK { .. },
            ) => true,
            E::Sampler(
                SamplerError::InvalidSteps | SamplerError::InvalidTopP(_) | SamplerError::PromptTooLong { .. },
            ) => true,
            _ => false,
        };
        if usage {
            Failure::Usage(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<ScorerError> for Failure {
    fn from(e: ScorerError) -> Self {
        delins_core::Error::from(e).into()
    }
}

impl From<SeqError> for Failure {
    fn from(e: SeqError) -> Self {
        delins_core::Error::from(e).into()
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let globals = Globals::resolve(cli.seed, cli.threads, &file);
    if let Some(n) = globals.threads {
        if n == 0 {
            return Err(Failure::Usage(anyhow!("threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Count { sub, seq, settings } => commands::count::run(&sub, &seq, settings.or(file.count), globals),
        Command::Train(s) => commands::train::run(s.or(file.train), globals),
        Command::Sample(s) => commands::sample::run(s.or(file.sample), globals),
        Command::Verify(s) => commands::verify::run(s.or(file.verify), globals),
        Command::Bench(s) => commands::bench::run(s.or(file.bench), globals),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(e) => eprintln!("error: {e:#}"),
                Failure::Verify(msg) => eprintln!("verification failed: {msg}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
