//! `protoprior` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// The only environment variable read: worker thread count.
pub const THREADS_ENV: &str = "PROTOPRIOR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "protoprior", version, about = "Prototype-prior CNN training, evaluation and zero-shot experiments")]
pub struct Cli {
    /// Master seed for data generation, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,

    /// TOML file whose values override the command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic glyph benchmark.
    Synth(SynthArgs),
    /// Compute the HOG embedding of an image.
    Hog(HogArgs),
    /// Train a network with a prototype or learned head.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset partition.
    Eval(EvalArgs),
    /// Zero-shot comparison of prototype swap against ConSE.
    Zeroshot(ZeroshotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 48)]
    pub image_side: usize,
    #[arg(long, default_value_t = 100)]
    pub prototype_side: usize,
}

#[derive(Debug, Args)]
pub struct HogArgs {
    /// Image file (PNG).
    pub image: Option<PathBuf>,
    /// Print the feature length and exit without reading an image.
    #[arg(long)]
    pub dims_only: bool,
    #[arg(long, default_value_t = 100)]
    pub side: usize,
    #[arg(long, default_value_t = 10)]
    pub cell: usize,
    #[arg(long, default_value_t = 2)]
    pub block: usize,
    #[arg(long, default_value_t = 1)]
    pub overlap: usize,
    #[arg(long, default_value_t = 12)]
    pub bins: usize,
    /// Use signed orientations over [0, 360).
    #[arg(long)]
    pub signed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Prototype,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackboneArg {
    Shared,
    Separate,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Built-in preset: desk or paper-ref.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Override the preset's epoch count (0 writes the initial network).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Dropout rate of the layer before the embedding, e.g. 0.5, 0.6 or 0.65.
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Prototype directory (default: <data>/prototypes).
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// Fixed prototype head, or an ordinary learned softmax layer.
    #[arg(long, value_enum, default_value_t = HeadArg::Prototype)]
    pub head: HeadArg,
    /// Also write a checkpoint before training and after every epoch.
    #[arg(long)]
    pub checkpoint_every_epoch: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory containing manifest.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Replace the head with these prototypes before evaluating.
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub partition: String,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    /// Dataset directory containing manifest.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Prototype directory (default: <data>/prototypes).
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// Number of random seen/unseen splits, each trained from scratch.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Number of classes withheld per trial.
    #[arg(long, default_value_t = 3)]
    pub unseen: usize,
    /// ConSE top-T (default: all seen classes).
    #[arg(long)]
    pub conse_top_t: Option<usize>,
    /// Seen-class softmax for ConSE: the proposed model's, or a separately trained learned-head net.
    #[arg(long, value_enum, default_value_t = BackboneArg::Shared)]
    pub conse_backbone: BackboneArg,
    /// Resamples of the paired permutation test.
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
    /// Partition the unseen classes are scored on.
    #[arg(long, default_value = "test")]
    pub partition: String,
    /// Also trace the seen/unseen trade-off curve for the first split.
    #[arg(long)]
    pub curve: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| config::invalid(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
        if n == 0 {
            return Err(config::invalid(format!("{THREADS_ENV} must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config::invalid(e.to_string()))?;
    }
    Ok(())
}

/// Stable category for the one-line error report.
fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<protoprior::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() || cause.downcast_ref::<toml::ser::Error>().is_some() {
            return "invalid-config";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    init_logging(cli.verbose);
    let result = init_threads().and_then(|()| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {}", category(&err), one_line(&format!("{err:#}")));
            ExitCode::FAILURE
        }
    }
}
