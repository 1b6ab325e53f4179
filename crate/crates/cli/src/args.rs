use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "dynfed",
    version,
    args_override_self = true,
    about = "Federated-continual segmentation simulator with prediction-distance update gating"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (method, seed) cell of a scenario and write history, gate
    /// logs, curves, summary and manifest.
    Run(ConfigArgs),
    /// Compare gate threshold factors on the catastrophic-forgetting scenario.
    AblateThreshold {
        /// Threshold factors to compare (each must exceed 1).
        #[arg(long, value_delimiter = ',', default_values_t = [1.9, 2.0, 2.1])]
        factors: Vec<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare augmented and plain reference sets on the client-drift and
    /// catastrophic-forgetting scenarios (2×2 table).
    AblateRefaug(ConfigArgs),
    /// Write only the per-round gate decisions (defaults to a 3-epoch run).
    GateTrace(ConfigArgs),
}

/// Run configuration. Precedence: flags, then `--config`, then `--preset`,
/// then built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; its fields override the preset.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Named desk-scale preset used as the base configuration.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Worker threads (results do not depend on it).
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output directory [default: $DYNFED_OUT_DIR, else ./dynfed-out].
    #[arg(long, value_name = "PATH")]
    pub out_dir: Option<PathBuf>,

    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated methods: baseline, dynbc, rehearsal, fedadam.
    #[arg(long, alias = "method")]
    pub methods: Option<String>,
    #[arg(long)]
    pub shift: Option<String>,
    /// Distance metric: diffnorm or dot.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub threshold_factor: Option<f64>,
    #[arg(long)]
    pub warmup_rounds: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_epochs: Option<usize>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub shifted_clients: Option<usize>,
    /// Comma-separated first epochs of later stages ("" for none).
    /// ablate-refaug applies it to the forgetting cell only.
    #[arg(long)]
    pub stage_boundaries: Option<String>,
    #[arg(long)]
    pub refset_size: Option<usize>,
    #[arg(long)]
    pub refset_augmented: Option<bool>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub patches_per_patient: Option<usize>,
    /// Comma-separated train,test[,val] fractions.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub local_epochs: Option<usize>,
    #[arg(long)]
    pub server_lr: Option<f64>,
    #[arg(long)]
    pub rehearsal_fraction: Option<f64>,
    #[arg(long)]
    pub incremental_aggregation: Option<bool>,
    /// Comma-separated ids of clients that return random parameters.
    #[arg(long)]
    pub poison_clients: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub poison_from_round: usize,
    #[arg(long, default_value_t = 0.3)]
    pub poison_scale: f64,
}
