//! `dcnet`: train, evaluate, gradient-check and inspect DCNet models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcnet_core::data::{LabelColumn, SynthKind};
use dcnet_core::train::GradcheckScope;
use dcnet_core::Precision;

#[derive(Debug, Parser)]
#[command(name = "dcnet", version, about = "Deconvolution → convolution network for 1-D feature vectors")]
pub struct Cli {
    /// Worker threads for batch-parallel kernels; results do not depend on it.
    #[arg(long, global = true, env = "DCNET_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize data, build a model, train it, write metrics and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Dump the activation of one layer for every sample.
    ExportFeatures(ExportArgs),
}

fn parse_synth(s: &str) -> Result<SynthKind, String> {
    s.replace('-', "_").parse().map_err(|e: dcnet_core::Error| e.to_string())
}

fn parse_label_col(s: &str) -> Result<LabelColumn, String> {
    s.parse().map_err(|e: dcnet_core::Error| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "single" => Ok(Precision::Single),
        "double" => Ok(Precision::Double),
        other => Err(format!("precision must be 'single' or 'double', got '{other}'")),
    }
}

fn parse_scope(s: &str) -> Result<GradcheckScope, String> {
    s.parse().map_err(|e: dcnet_core::Error| e.to_string())
}

/// Where samples come from: a CSV file or a synthetic generator.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Label column position in CSV files.
    #[arg(long, value_parser = parse_label_col, default_value = "last")]
    pub label_col: LabelColumn,
    /// CSV files start with a header row.
    #[arg(long)]
    pub header: bool,
    /// Synthetic dataset instead of CSV input: two_rings, xor_blobs,
    /// linear_2class or sine_regression.
    #[arg(long, value_parser = parse_synth)]
    pub synth: Option<SynthKind>,
    /// Synthetic sample count.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Synthetic attribute count.
    #[arg(long, default_value_t = 8)]
    pub attrs: usize,
    /// Synthetic noise standard deviation [default: 0 for linear_2class, 0.1 otherwise].
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_csv: Option<PathBuf>,
    /// Held-out CSV; without it the training data is split.
    #[arg(long, requires = "train_csv")]
    pub test_csv: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Fraction of samples used for training when no test file is given.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Number of classes; omit together with --regression for synthetic data.
    #[arg(long, conflicts_with = "regression")]
    pub classes: Option<usize>,
    /// Real-valued target with an MSE head.
    #[arg(long)]
    pub regression: bool,
    /// Deconvolution layers in the imaging phase (3 to 6).
    #[arg(long, default_value_t = 6)]
    pub deconv: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 9)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Learning-rate multiplier applied every --decay-every epochs.
    #[arg(long, default_value_t = 0.9)]
    pub decay: f64,
    #[arg(long, default_value_t = 3)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Seeds data generation, splitting, initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// single or double.
    #[arg(long, value_parser = parse_precision, default_value = "single")]
    pub precision: Precision,
    /// Output directory for metrics.csv, model.dcn and the sidecar files.
    #[arg(long, default_value = "dcnet-out")]
    pub out: PathBuf,
    /// Also write model-epochN.dcn after every epoch.
    #[arg(long)]
    pub checkpoint_every_epoch: bool,
    /// Write 0 in the seconds column so repeated runs are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Seed for synthetic data.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Normalization statistics; defaults to norm_stats.csv next to the model.
    #[arg(long)]
    pub norm_stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Restrict to one scope (repeatable); all scopes by default.
    #[arg(long, value_parser = parse_scope)]
    pub scope: Vec<GradcheckScope>,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_synth)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub attrs: usize,
    /// Noise standard deviation [default: 0 for linear_2class, 0.1 otherwise].
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination CSV (header row, label last).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub norm_stats: Option<PathBuf>,
    /// Layer id such as L11, or `input`; defaults to the generated image layer.
    #[arg(long)]
    pub layer: Option<String>,
    /// Export only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
