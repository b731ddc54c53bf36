//! Command-line harness: synthetic data, training, scoring, evaluation over
//! seeds, benchmark tables, stability sweeps and the variance diagnostic.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;
use vsde::VsdeError;

mod commands;
pub mod settings;

pub use settings::{ModelArgs, Settings};

/// Environment variable naming the default benchmark manifest.
pub const MANIFEST_ENV: &str = "VSDE_MANIFEST";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] VsdeError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(VsdeError::Config(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vsde",
    version,
    about = "Variance-stabilized density estimation for tabular anomaly detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the three-cluster synthetic benchmark as a labeled CSV
    Synth {
        /// Generator seed [default: 0]
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Split, standardize and train an ensemble on the first seed; save it
    Train {
        /// Labeled CSV (last column `label`, 1 = anomaly)
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Model directory to create
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a table with a saved model; writes `row_index,anomaly_score`
    Score {
        /// Model directory written by `train`
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// CSV with the training features (and a label column unless --no-labels)
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// The CSV has no label column [default: false]
        #[arg(long)]
        no_labels: bool,
        /// Output scores CSV
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run the full protocol once per seed and report AUC mean and deviation
    Eval {
        /// Labeled CSV
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Directory for metrics.txt, runs.csv and per-seed scores
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate every dataset of a manifest; writes AUC, profile and summary tables
    Bench {
        /// Manifest of `name = path [labels|nolabels]` lines [default: $VSDE_MANIFEST]
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Points of the profile grid over [0, 1] [default: 101]
        #[arg(long)]
        thetas: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// AUC over lambda, ensemble-size and contamination grids, relative to lambda = 0
    Sweep {
        /// Labeled CSV
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Directory for sweep.csv
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Variance ratio of normal to anomalous log-likelihoods for a scored set
    Diagnose {
        /// Scores CSV written by `score` (row_index, anomaly_score)
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        /// Labeled CSV the scores refer to
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Subsampling seed; repeats use consecutive seeds [default: 0]
        #[arg(long)]
        seed: Option<u64>,
        /// Number of balanced subsamples to average [default: 1]
        #[arg(long)]
        repeats: Option<usize>,
        /// Metrics file [default: print only]
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// Executes one command; human-readable results go to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { seed, out } => commands::synth(seed.unwrap_or(0), &out),
        Command::Train { data, out, model } => commands::train(&data, &out, &Settings::resolve(&model)?),
        Command::Score {
            model,
            data,
            no_labels,
            out,
        } => commands::score(&model, &data, !no_labels, &out),
        Command::Eval { data, out, model } => commands::eval(&data, out.as_deref(), &Settings::resolve(&model)?),
        Command::Bench {
            manifest,
            out,
            thetas,
            model,
        } => {
            let manifest = manifest
                .or_else(|| std::env::var_os(MANIFEST_ENV).map(PathBuf::from))
                .ok_or_else(|| CliError::Config(format!("no --manifest given and {MANIFEST_ENV} is unset")))?;
            commands::bench(&manifest, &out, thetas.unwrap_or(101), &Settings::resolve(&model)?)
        }
        Command::Sweep { data, out, model } => commands::sweep(&data, out.as_deref(), &Settings::resolve(&model)?),
        Command::Diagnose {
            scores,
            data,
            seed,
            repeats,
            out,
        } => commands::diagnose(&scores, &data, seed.unwrap_or(0), repeats.unwrap_or(1), out.as_deref()),
    }
}
