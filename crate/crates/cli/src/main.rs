//! `encoderlab`: train, fine-tune, evaluate, and rank bidirectional text
//! encoders from the command line.
//!
//! Exit codes: 0 success, 1 configuration or input problems, 2 runtime
//! failures, 3 failed verification checks.

mod chart;
mod commands;
mod config;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use encoderlab::Error;

#[derive(Parser)]
#[command(
    name = "encoderlab",
    version,
    about = "Masked-language encoder training and evaluation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a byte-pair vocabulary from plain-text files (one text per line).
    TokenizerTrain {
        /// Input text files; every non-empty line is a training document.
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        /// Total vocabulary size including special and byte tokens.
        #[arg(long)]
        vocab_size: usize,
        /// Where to write the trained vocabulary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the main pretraining phase of a run configuration.
    Pretrain {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Resume from a checkpoint written by an earlier invocation.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write loss-curve.svg.
        #[arg(long)]
        chart: bool,
    },
    /// Continue a pretrained checkpoint through the annealing phase.
    Anneal {
        /// Run configuration (TOML); the same file used for pretraining.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        from: PathBuf,
        /// Also write loss-curve.svg.
        #[arg(long)]
        chart: bool,
    },
    /// Fine-tune a checkpoint on a labeled task with a learning-rate grid.
    Finetune {
        /// Fine-tuning configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the number of learning rates in the grid.
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Score a predictions file against gold labels.
    Evaluate {
        /// Task the files encode.
        #[arg(long, value_enum)]
        task: EvalTaskArg,
        /// Predictions (JSONL, one record per example).
        #[arg(long)]
        predictions: PathBuf,
        /// Gold labels (JSONL, same example ids).
        #[arg(long)]
        gold: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Second predictions file for fertility-bucketed comparison.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Also write SVG charts.
        #[arg(long)]
        chart: bool,
    },
    /// Cluster systems by statistical significance and rank them.
    Rank {
        /// Per-example scores (JSONL with system, language, example fields).
        #[arg(long)]
        scores: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Confidence level for the paired significance test.
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Bootstrap resamples per comparison.
        #[arg(long, default_value_t = 1000)]
        resamples: u64,
        /// Base seed for the resampling streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write borda.svg.
        #[arg(long)]
        chart: bool,
    },
    /// Run built-in numerical self-checks.
    Verify {
        /// Suite name, or "all".
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTaskArg {
    Retrieval,
    Regression,
    TokenClass,
}

impl From<EvalTaskArg> for commands::EvalTask {
    fn from(value: EvalTaskArg) -> Self {
        match value {
            EvalTaskArg::Retrieval => commands::EvalTask::Retrieval,
            EvalTaskArg::Regression => commands::EvalTask::Regression,
            EvalTaskArg::TokenClass => commands::EvalTask::TokenClass,
        }
    }
}

/// Bad inputs are the caller's problem (1); everything else is ours (2).
fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::ShapeMismatch { .. }
        | Error::EmptySelection(_) => 1,
        Error::NonFinite(_) | Error::Checkpoint(_) | Error::Io(_) => 2,
    }
}

fn run(command: Command) -> encoderlab::Result<u8> {
    match command {
        Command::TokenizerTrain { corpus, vocab_size, out } => {
            commands::tokenizer_train(&corpus, vocab_size, &out)?;
            Ok(0)
        }
        Command::Pretrain { config, resume, chart } => {
            commands::pretrain(&config, resume.as_deref(), chart)?;
            Ok(0)
        }
        Command::Anneal { config, from, chart } => {
            commands::anneal(&config, &from, chart)?;
            Ok(0)
        }
        Command::Finetune { config, grid_size } => {
            commands::finetune_cmd(&config, grid_size)?;
            Ok(0)
        }
        Command::Evaluate { task, predictions, gold, out, baseline, chart } => {
            commands::evaluate_cmd(
                task.into(),
                &predictions,
                &gold,
                &out,
                baseline.as_deref(),
                chart,
            )?;
            Ok(0)
        }
        Command::Rank { scores, out, confidence, resamples, seed, chart } => {
            commands::rank(&scores, &out, confidence, resamples, seed, chart)?;
            Ok(0)
        }
        Command::Verify { suite } => {
            if verify::run_suite(&suite)? {
                Ok(0)
            } else {
                Ok(3)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
