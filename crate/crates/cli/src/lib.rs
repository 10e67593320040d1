//! Command-line front end: simulation, label-frequency estimation,
//! debiasing and the SGG / HOI / VidVRD evaluation suites over JSON Lines
//! files.

pub mod commands;
pub mod error;
pub mod io;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sgdebias", version, about = "Debias and evaluate scene-graph and HOI predictions")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic SCAR corpus
    Simulate(SimulateArgs),
    /// Estimate per-class label frequencies from a prediction trace
    Estimate(EstimateArgs),
    /// Divide predicate probabilities by label frequencies
    Debias(DebiasArgs),
    /// Recall@K / mean Recall@K for scene-graph predictions
    EvalSgg(EvalSggArgs),
    /// Triplet mAP for keyframe HOI detections
    EvalHoi(EvalHoiArgs),
    /// Relation detection and tagging for video relations
    EvalVidvrd(EvalVidvrdArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config file
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// dlfe | train-est
    #[arg(long, default_value = "dlfe")]
    pub method: String,
    #[arg(long, default_value_t = sgdebias::pu::DEFAULT_MOMENTUM)]
    pub alpha: f64,
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction trace; records carry a batch_id and are replayed in order
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long, default_value = "predcls")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Fill classes without a valid example with the median estimate
    #[arg(long)]
    pub fill_missing: bool,
    /// Also write class,c,valid_count to this CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct DebiasArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub freq: PathBuf,
    /// Keep q = p / c without renormalizing over the foreground classes
    #[arg(long)]
    pub no_renormalize: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct EvalSggArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long, default_value = "predcls")]
    pub mode: String,
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    pub k: Vec<usize>,
    /// on | off | both
    #[arg(long, default_value = "both")]
    pub graph_constraint: String,
    /// Predicate names and training counts (enables head/middle/tail)
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Label-frequency estimate to include as label_freq.csv
    #[arg(long)]
    pub freq: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct EvalHoiArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "full,rare,nonrare")]
    pub splits: Vec<String>,
    /// CSV `interaction,temporal` tagging every interaction class
    #[arg(long)]
    pub temporal_tags: Option<PathBuf>,
    /// CSV `predicate,object_class,count` of training instances (default: test counts)
    #[arg(long)]
    pub category_counts: Option<PathBuf>,
    #[arg(long, default_value_t = sgdebias::hoi::KEYFRAME_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalVidvrdArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub tag_k: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Help and version requests print and succeed.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Debias(a) => commands::debias(&a),
        Command::EvalSgg(a) => commands::eval_sgg(&a),
        Command::EvalHoi(a) => commands::eval_hoi(&a),
        Command::EvalVidvrd(a) => commands::eval_vidvrd(&a),
    })
}
