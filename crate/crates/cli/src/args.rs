use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use seplab_core::{AttackKind, Metric, SeparationMode};

#[derive(Debug, Parser)]
#[command(
    name = "seplab",
    version,
    about = "Separation, certification, robust training and smoothness measurements for labeled data"
)]
pub struct Cli {
    /// Maximum number of worker threads (default: one per core). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distance from every query to its nearest differently-labeled reference.
    Separation(SeparationArgs),
    /// Certify test points with the distance classifier built on a training set.
    Certify(CertifyArgs),
    /// Train a network from a TOML run file.
    Train(TrainArgs),
    /// Attack a trained network on every example of a dataset.
    Attack(AttackArgs),
    /// Empirical local Lipschitz constant of a trained network.
    Lipschitz(LipschitzArgs),
    /// Clean/adversarial accuracy, gaps and Lipschitz constant of a trained network.
    Evaluate(EvaluateArgs),
    /// Generate the two-arm spiral dataset.
    Spiral(SpiralArgs),
    /// Generate uniform blobs around given centers.
    Blobs(BlobsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Separation(_) => "separation",
            Command::Certify(_) => "certify",
            Command::Train(_) => "train",
            Command::Attack(_) => "attack",
            Command::Lipschitz(_) => "lipschitz",
            Command::Evaluate(_) => "evaluate",
            Command::Spiral(_) => "spiral",
            Command::Blobs(_) => "blobs",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SeparationArgs {
    /// Query set; train-train mode uses the reference set when omitted.
    #[arg(long, value_name = "DATASET")]
    pub queries: Option<String>,
    #[arg(long, value_name = "DATASET")]
    pub references: String,
    #[arg(long, default_value = "linf")]
    pub metric: Metric,
    /// train-train or test-train
    #[arg(long)]
    pub mode: SeparationMode,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram CSV of the distances.
    #[arg(long)]
    pub hist: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub hist_bin: f64,
    /// List records with distance at or below this value.
    #[arg(long, value_name = "EPS")]
    pub flag_below: Option<f64>,
    /// Where the flagged records go (default: standard output).
    #[arg(long, requires = "flag_below")]
    pub flagged: Option<PathBuf>,
    /// Replace labels with uniform random draws before measuring.
    #[arg(long)]
    pub random_labels: bool,
    /// Seed of the random labels.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct CertifyArgs {
    #[arg(long, value_name = "DATASET")]
    pub train: String,
    #[arg(long, value_name = "DATASET")]
    pub test: String,
    /// Separation radius r of the classifier; also the astuteness radius.
    #[arg(long)]
    pub radius: f64,
    #[arg(long, default_value = "linf")]
    pub metric: Metric,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// TOML run file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the run file's `train` dataset.
    #[arg(long, value_name = "DATASET")]
    pub train: Option<String>,
    /// Overrides the run file's `test` dataset.
    #[arg(long, value_name = "DATASET")]
    pub test: Option<String>,
    /// Model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_name = "DATASET")]
    pub data: String,
    /// pgd or mt
    #[arg(long, default_value = "pgd")]
    pub method: AttackKind,
    #[arg(long)]
    pub epsilon: f64,
    /// Default 10 for pgd, 20 per target for mt.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Default epsilon/5 for pgd, 2*epsilon/20 for mt.
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Default false for pgd, true for mt.
    #[arg(long)]
    pub random_start: Option<bool>,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LipschitzArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_name = "DATASET")]
    pub data: String,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Default epsilon/5.
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_name = "DATASET")]
    pub train: String,
    #[arg(long, value_name = "DATASET")]
    pub test: String,
    /// Attack radius.
    #[arg(long)]
    pub epsilon: f64,
    /// pgd or mt, with that attack's default schedule.
    #[arg(long, default_value = "pgd")]
    pub attack: AttackKind,
    /// Lipschitz ball radius (default: epsilon).
    #[arg(long)]
    pub lipschitz_epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Method column of the CSV row.
    #[arg(long, default_value = "model")]
    pub label: String,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Single-row CSV with the same numbers.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SpiralArgs {
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 4.33 * std::f64::consts::PI)]
    pub x_range_max: f64,
    #[arg(long, default_value_t = 0.75)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shuffle, then greedily drop points until the set is r-separated.
    #[arg(long, value_name = "R")]
    pub prune_radius: Option<f64>,
    #[arg(long, default_value = "linf")]
    pub metric: Metric,
    /// Fraction of the (shuffled, pruned) points written to --test-out.
    #[arg(long, requires = "test_out")]
    pub test_fraction: Option<f64>,
    /// Dataset file (the training part when splitting).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "test_fraction")]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BlobsArgs {
    /// Centers as `x1,x2,...;y1,y2,...`; center k gets label k+1.
    #[arg(long)]
    pub centers: String,
    /// Half-width of the uniform cube around each center.
    #[arg(long)]
    pub spread: f64,
    #[arg(long, default_value_t = 50)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
