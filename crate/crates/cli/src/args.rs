use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::tables::SweepAxis;

#[derive(Debug, Parser)]
#[command(name = "bituning", version, about = "Bi-tuning experiments on small dense models")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file; omitted sections take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed, overriding `run.seed` from the file and `--set`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory, overriding `run.output`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dotted config override such as `loss.tau=0.1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub set: Vec<String>,
    /// Worker threads for ablate and sweep (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics.csv, checkpoint.txt, summary.json
    /// and the effective config.toml.
    Train,
    /// Report top-1 accuracy of a checkpoint on the configured data.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Eval)]
        split: Split,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Random instances per check.
        #[arg(long, default_value_t = 20)]
        instances: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// The five loss combinations (CE; CE+CCE; CE+CCL; CCE+CCL; all)
    /// across sampling rates and seeds; writes ablation.csv.
    Ablate {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 0.75, 1.0])]
        rates: Vec<f64>,
        /// Defaults to the single run seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// One fit per (value, seed) along a hyper-parameter axis; writes
    /// sweep.csv.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Validation split (the training set when `val_fraction` is 0).
    Eval,
    Train,
}
