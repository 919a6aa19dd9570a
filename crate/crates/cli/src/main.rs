//! `patchtst`: synthesize, train, calibrate, predict and evaluate.

mod commands;
mod config;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchtst_har::dataset::Sensor;
use patchtst_har::ensemble::Averaging;
use patchtst_har::normalize::NormMode;
use patchtst_har::train::StreamKind;

/// Failure classes, mapped to exit codes 2 and 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<patchtst_har::Error> for CliError {
    fn from(e: patchtst_har::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "patchtst", version, about = "Patch-transformer activity recognition on accelerometer windows")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic four-sensor dataset, one JSONL file per sensor.
    Synth(SynthArgs),
    /// Cut labelled streams into fixed-length windows.
    Segment(SegmentArgs),
    /// Train one encoder for one sensor and stream.
    Train(TrainArgs),
    /// Fit a softmax temperature on the checkpoint's held-out subjects.
    Calibrate(CalibrateArgs),
    /// Fuse models across streams and sensors and write a label CSV.
    Predict(PredictArgs),
    /// Score a label CSV against labelled windows.
    Evaluate(EvaluateArgs),
    /// Macro-F1 with each sensor removed in turn.
    Dropout(DropoutArgs),
    /// Apply each transform to one window for plotting.
    #[command(name = "augment-demo", alias = "augdemo")]
    AugmentDemo(AugDemoArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Number of classes (2..=19).
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Windows per class and sensor.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Additive Gaussian noise in g, applied to every sensor.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Windows are dealt round-robin to this many subjects.
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    /// Output directory; receives LA.jsonl, RA.jsonl, LL.jsonl, RL.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SegmentArgs {
    /// JSONL file of labelled streams.
    #[arg(long)]
    pub streams: PathBuf,
    /// Output window JSONL.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    /// 25 for training data, 50 (non-overlapping) for inference.
    #[arg(long, default_value_t = 25)]
    pub stride: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub sensor: Sensor,
    #[arg(long)]
    pub stream: StreamKind,
    /// Window JSONL files; windows of other sensors are ignored.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of subject folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Validation fold index.
    #[arg(long, conflicts_with = "no_validation")]
    pub fold: Option<usize>,
    /// Train on every subject without a validation split.
    #[arg(long)]
    pub no_validation: bool,
    #[arg(long, value_parser = parse_norm)]
    pub norm: Option<NormMode>,
    /// Augmentation preset for the robust stream (pool-v1, pool-v2).
    #[arg(long)]
    pub aug: Option<String>,
    /// Classes in the model head.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Checkpoint to calibrate.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Where to write the calibrated checkpoint (default: overwrite --model).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoints; one or two streams per sensor.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Active sensors (default: every sensor present in the data).
    #[arg(long, value_delimiter = ',')]
    pub sensors: Vec<Sensor>,
    /// Output CSV with columns id,label.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Prediction CSV with columns id,label.
    #[arg(long)]
    pub pred: PathBuf,
    /// Labelled window JSONL files.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub truth: Vec<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Heatmap CSV path (true_class,pred_class,normalized_value).
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long, default_value_t = patchtst_har::dataset::NUM_CLASSES)]
    pub classes: usize,
    /// present-classes or all-classes.
    #[arg(long, default_value = "present-classes", value_parser = parse_averaging)]
    pub averaging: Averaging,
}

#[derive(Args)]
pub struct DropoutArgs {
    /// Checkpoints covering all four sensors.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = patchtst_har::dataset::NUM_CLASSES)]
    pub classes: usize,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AugDemoArgs {
    /// Window JSONL; a synthetic window is used when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Index of the window within --data.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value = "pool-v1")]
    pub policy: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_norm(s: &str) -> Result<NormMode, String> {
    match s {
        "global" => Ok(NormMode::Global),
        "per-window" => Ok(NormMode::PerWindow),
        _ => Err(format!("expected global or per-window, got '{s}'")),
    }
}

fn parse_averaging(s: &str) -> Result<Averaging, String> {
    match s {
        "present-classes" => Ok(Averaging::PresentClasses),
        "all-classes" => Ok(Averaging::AllClasses),
        _ => Err(format!("expected present-classes or all-classes, got '{s}'")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Segment(a) => commands::segment(a),
        Command::Train(a) => commands::train(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Dropout(a) => commands::dropout(a),
        Command::AugmentDemo(a) => commands::augment_demo(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
