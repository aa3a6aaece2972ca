use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use edgeguard::ids_models::Family;

#[derive(Debug, Parser)]
#[command(name = "edgeguard", version, about = "Permissioned IoT ledger with gateway intrusion detection")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for splitting and model initialization (default 42); for
    /// `simulate` it replaces the scenario's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `key = value` file whose entries override flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, select features, split and train one model.
    Train(TrainArgs),
    /// Score a model on a labeled flow set.
    Evaluate(EvaluateArgs),
    /// Run a network scenario end to end.
    Simulate(SimulateArgs),
    /// Inspect, verify or query an exported ledger.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV files or directories of CSV files.
    #[arg(long = "data", num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Use the generated corpus instead of `--data`.
    #[arg(long)]
    pub synthetic: bool,
    /// Generator seed for `--synthetic`.
    #[arg(long, default_value_t = edgeguard::ids_data::synthetic::CORPUS_SEED)]
    pub corpus_seed: u64,
    #[arg(long, default_value = "tree")]
    pub family: Family,
    /// Stratified fraction of the cleaned data to keep.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// `strict` removes infinities and duplicates; `reference` clamps
    /// infinities and keeps duplicates.
    #[arg(long, default_value = "strict")]
    pub clean: String,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_split: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub var_smoothing: Option<f64>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A `.flows` file written by `train`, or CSV files.
    #[arg(long = "data", num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file.
    #[arg(long, conflicts_with = "bundled")]
    pub scenario: Option<PathBuf>,
    /// Name of a scenario shipped with the tool.
    #[arg(long)]
    pub bundled: Option<String>,
    /// Model file; without it a decision tree is trained on the synthetic
    /// corpus named by the scenario.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LedgerAction {
    /// Print blocks and the resulting world state.
    Inspect { file: PathBuf },
    /// Re-check every hash and link.
    Verify { file: PathBuf },
    /// Current value and history of one asset.
    Query { file: PathBuf, id: String },
}
