use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "tongue", version, about = "Tongue-image registration, fusion and classification")]
pub struct Cli {
    /// Run configuration (JSON)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; overrides the config's
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-image stages
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic two-class dataset with a manifest
    Synth {
        #[arg(long)]
        n_per_class: usize,
        #[arg(long)]
        separation: f64,
        #[arg(long, default_value_t = 0.0)]
        pose_jitter: f64,
        #[arg(long, default_value_t = 0.25)]
        test_fraction: f64,
    },
    /// Warp every manifest image onto the reference frame
    Register {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Crop registered images and write the five regions
    Regions {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train the four corner-region feature networks
    TrainExtractors {
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        channel: Option<usize>,
    },
    /// Build composite images from regions and trained extractors
    Fuse {
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        extractors: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        channel: Option<usize>,
    },
    /// Train the CNN head on composite images
    TrainCnn {
        /// Composite manifest written by `fuse`
        #[arg(long)]
        composites: PathBuf,
        /// Also write per-layer tap activations of the training set here
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
    /// Train an SVM on flattened composites or on one CNN tap
    TrainSvm {
        #[arg(long)]
        composites: PathBuf,
        #[arg(long, requires = "layer")]
        cnn: Option<PathBuf>,
        #[arg(long, requires = "cnn")]
        layer: Option<String>,
    },
    /// Rank dumped layers by mean cross-class mutual information
    MiSelect {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        max_pairs: Option<usize>,
    },
    /// Evaluate a CNN or SVM checkpoint on the test split of a composite manifest
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// CNN providing tap features for an SVM trained on a tap
        #[arg(long, requires = "layer")]
        cnn: Option<PathBuf>,
        #[arg(long, requires = "cnn")]
        layer: Option<String>,
    },
    /// Full pipeline from the run configuration
    Run,
    /// Compare backprop with central differences
    Gradcheck {
        #[arg(long, value_enum, default_value_t = GradModel::Both)]
        model: GradModel,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 20)]
        params: usize,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradModel {
    Mlp,
    Cnn,
    Both,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}
