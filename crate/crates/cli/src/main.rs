//! `bench`: reproducible commands over the speechbench pipeline.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bench", version, about = "Speech-biomarker screening bench")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; every stochastic component derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian corpus with embeddings.
    SynthData {
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        train_subjects: Option<usize>,
        #[arg(long)]
        test_subjects: Option<usize>,
    },
    /// Write augmented variants of a WAV file.
    Augment {
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        variants: usize,
    },
    /// Build an embedding store from EMB1 files or by encoding manifest audio.
    EmbedImport {
        /// Directory of `<clip_id>.emb` files.
        #[arg(long, conflicts_with = "encode")]
        from: Option<PathBuf>,
        /// Encode each clip's audio with the synthetic encoder.
        #[arg(long)]
        encode: bool,
        /// Channel count for --encode.
        #[arg(long, default_value_t = speechbench::embed::DEFAULT_DIM)]
        dim: usize,
    },
    /// Train one head and save a checkpoint.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Repeat training and test-split evaluation over independent trials.
    Trials {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Merge model predictions and exported human responses into reports.
    Compare {
        /// Model predictions (JSON Lines, one record per clip and trial).
        #[arg(long)]
        model: PathBuf,
        /// Exported human responses (JSON Lines).
        #[arg(long)]
        human: PathBuf,
    },
    /// Build listening-test assignments.
    Assign {
        /// Comma-separated participant ids.
        #[arg(long, value_delimiter = ',', required = true)]
        participants: Vec<String>,
    },
    /// Run the listening-test HTTP service.
    Serve {
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Environment variable holding the export bearer token.
        #[arg(long, default_value = "SPEECHBENCH_ADMIN_TOKEN")]
        admin_token_env: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap picks 0 for --help/--version and 2 for usage errors.
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(commands::Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
