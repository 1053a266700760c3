//! The `dlsvm` command-line tool.
//!
//! Every setting can come from a flag or from a `--config` file of
//! `key = value` lines (keys are the long flag names); flags win. The
//! effective settings are logged to stderr at startup.

mod commands;
pub mod config;

use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::{KeepProb, Widths};
pub use config::{ConfigFile, Resolver};

use crate::error::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_FORMAT: u8 = 5;
pub const EXIT_NUMERIC: u8 = 6;
pub const EXIT_IO: u8 = 7;
pub const EXIT_GRADCHECK: u8 = 8;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  2  unrecognized flag or malformed flag value
  3  input error (unreadable or unusable data)
  4  config error (bad setting, incompatible checkpoint and dataset)
  5  format error (corrupt checkpoint or dataset file)
  6  numeric failure (non-finite loss or activation during training)
  7  io error
  8  gradient check failed";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("gradient check failed for {}", .0.join(", "))]
    Gradcheck(Vec<String>),
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Gradcheck(_) => EXIT_GRADCHECK,
            CliError::Core(e) => match e {
                Error::Input(_) | Error::Dimension(_) | Error::Image(_) => EXIT_INPUT,
                Error::Config(_) => EXIT_CONFIG,
                Error::Format { .. } => EXIT_FORMAT,
                Error::Numeric { .. } => EXIT_NUMERIC,
                Error::Io(_) | Error::Csv(_) => EXIT_IO,
            },
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dlsvm", version, about = "Deep-learning malware classifiers with an L2-SVM output layer", after_help = EXIT_HELP)]
pub struct Cli {
    /// File of `key = value` lines supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<String>,

    /// More log output (repeat for trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn binaries into grayscale images plus a manifest.csv.
    Convert(ConvertArgs),
    /// Resize, split and standardize an image tree into a dataset file.
    Preprocess(PreprocessArgs),
    /// Write a seeded synthetic dataset file.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Classify one binary or image.
    Predict(PredictArgs),
    /// Finite-difference check of every gradient on miniature models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Binary file, or directory walked recursively.
    #[arg(long)]
    pub input: Option<String>,
    /// Output directory; mirrors the input's subdirectories.
    #[arg(long)]
    pub output: Option<String>,
    /// Image width: `auto` (from file size) or pixels [default: auto].
    #[arg(long)]
    pub width: Option<String>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Image tree with one subdirectory per family.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training fraction [default: 0.7].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Split sizes are rounded down to multiples of this [default: 256].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Rows the standardization is fitted on: train or all [default: train].
    #[arg(long)]
    pub fit_on: Option<String>,
    /// Images are resized to side × side [default: 32].
    #[arg(long)]
    pub side: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// blobs, patterns, rows or toy [default: blobs].
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// [default: 2560]
    #[arg(long)]
    pub samples: Option<usize>,
    /// [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 0.8]
    #[arg(long)]
    pub ratio: Option<f64>,
    /// [default: 256]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: train]
    #[arg(long)]
    pub fit_on: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// cnn-svm, gru-svm or mlp-svm.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<String>,
    /// Per-step CSV log to write.
    #[arg(long)]
    pub log: Option<String>,
    /// Continue from this checkpoint; only --epochs may change.
    #[arg(long)]
    pub resume: Option<String>,
    /// Preset default for every hyper-parameter below.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Dropout keep probability, or `none`.
    #[arg(long)]
    pub keep_prob: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sum or mean over the batch in the hinge term.
    #[arg(long)]
    pub reduction: Option<String>,
    /// Comma-separated filter counts, GRU sizes or dense widths.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub fc_units: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub pool_stride: Option<usize>,
    /// Log wall_ms as 0 so logs are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    /// Score the test split after every epoch.
    #[arg(long)]
    pub eval_each_epoch: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// test or train [default: test].
    #[arg(long)]
    pub subset: Option<String>,
    /// Per-class precision/recall/F1 CSV.
    #[arg(long)]
    pub report: Option<String>,
    /// Confusion matrix CSV.
    #[arg(long)]
    pub confusion: Option<String>,
    /// Row-normalized confusion heatmap (SVG).
    #[arg(long)]
    pub heatmap: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// A binary or an image file.
    #[arg(long)]
    pub input: Option<String>,
    /// How to read the input: auto, image or binary [default: auto].
    #[arg(long = "as")]
    pub read_as: Option<String>,
    /// Visualization width for binaries [default: auto].
    #[arg(long)]
    pub width: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// cnn-svm, gru-svm, mlp-svm or all [default: all].
    #[arg(long)]
    pub model: Option<String>,
    /// Only `mini` is available [default: mini].
    #[arg(long)]
    pub scale: Option<String>,
    /// [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path.as_ref())?,
        None => ConfigFile::default(),
    };
    let r = Resolver::new(&file);
    match &cli.command {
        Command::Convert(a) => commands::convert(a, &r, out),
        Command::Preprocess(a) => commands::preprocess(a, &r, out),
        Command::Synth(a) => commands::synth(a, &r, out),
        Command::Train(a) => commands::train(a, &r, out),
        Command::Eval(a) => commands::eval(a, &r, out),
        Command::Predict(a) => commands::predict(a, &r, out),
        Command::Gradcheck(a) => commands::gradcheck(a, &r, out),
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Process entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut out).and_then(|()| out.flush().map_err(CliError::from)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
