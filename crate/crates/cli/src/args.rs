use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "spectra", version, about = "Spectral diagnostics for toy superposition models")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command. Unset values fall back to the config
/// file, then to `SPECTRA_THREADS` for the thread count, then to defaults.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Global {
    /// Root seed for training and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Relative tolerance for grouping eigenvalues.
    #[arg(long, global = true)]
    pub tol_group: Option<f64>,
    /// Relative tolerance below which an eigenvalue counts as zero.
    #[arg(long, global = true)]
    pub tol_zero: Option<f64>,
    /// Worker threads for sweeps and kernel estimation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// JSON file of option values; command-line flags take precedence.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a toy model and write its weight snapshots.
    Train(TrainArgs),
    /// Per-feature diagnostics and geometry report for a weight file.
    Analyze(AnalyzeArgs),
    /// Cluster and scheme identification for a weight file.
    Classify(AnalyzeArgs),
    /// Integrate the Gram flow from a weight file.
    Flow(FlowArgs),
    /// Train and analyze a grid of models.
    Sweep(SweepArgs),
    /// Saturation and projective-linearity tables from a sweep directory.
    Aggregate(AggregateArgs),
    /// CSV and SVG plot data.
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Uniform sparsity, or a profile: `ramp:FROM:TO`, `block:FIRST:SECOND:SPLIT`,
    /// `explicit:S1,S2,...`.
    #[arg(long)]
    pub sparsity: Option<String>,
    /// Importance of feature `i` is `decay^i`.
    #[arg(long)]
    pub importance_decay: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierArg {
    Exact,
    Trained,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeArgs {
    /// Weight file in the binary matrix format.
    #[serde(skip)]
    pub weights: PathBuf,
    /// Minimum dominant mass for a feature to join a cluster.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub tier: Option<TierArg>,
    /// Atoms below this mass are ignored by the band bound.
    #[arg(long)]
    pub mass_floor: Option<f64>,
    /// Slack thresholds for the tail-mass bound.
    #[arg(long, value_delimiter = ',')]
    pub tail_taus: Option<Vec<f64>>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    /// Fixed sampled batch.
    Batch,
    /// Enumerated supports with at most two active features.
    Exact,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowArgs {
    #[serde(skip)]
    pub weights: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Integration step.
    #[arg(long)]
    pub h: Option<f64>,
    /// Record every this many steps.
    #[arg(long)]
    pub every: Option<usize>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Batch size for the sampled kernel.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Quadrature panels per axis for the enumerated kernel.
    #[arg(long)]
    pub panels: Option<usize>,
    /// Same syntax as for training.
    #[arg(long)]
    pub sparsity: Option<String>,
    #[arg(long)]
    pub importance_decay: Option<f64>,
    /// Compare drift formulas with finite differences at the start.
    #[arg(long)]
    #[serde(skip)]
    pub validate: bool,
    /// Finite-difference step for validation.
    #[arg(long)]
    pub fd_step: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepArgs {
    /// Use the built-in desk-scale grid; other grid flags refine it.
    #[arg(long)]
    #[serde(skip)]
    pub desk: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ms: Option<Vec<usize>>,
    /// Comma-separated uniform sparsities.
    #[arg(long, value_delimiter = ',')]
    pub sparsities: Option<Vec<f64>>,
    /// Per-feature profiles, repeatable; replaces the uniform list.
    #[arg(long)]
    pub profile: Option<Vec<String>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub tier: Option<TierArg>,
    /// Retrain cells that already have a record.
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateArgs {
    /// Sweep output directory.
    #[serde(skip)]
    pub dir: PathBuf,
    /// Localization cutoff for the linearity summary.
    #[arg(long)]
    pub min_localization: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportArgs {
    /// Sweep output directory.
    #[serde(skip)]
    pub dir: Option<PathBuf>,
    /// Weight file whose spectral density to plot.
    #[arg(long)]
    #[serde(skip)]
    pub weights: Option<PathBuf>,
    /// Flow trajectory JSONL to plot.
    #[arg(long)]
    #[serde(skip)]
    pub flow: Option<PathBuf>,
    /// Write CSV only.
    #[arg(long)]
    #[serde(skip)]
    pub no_svg: bool,
}
