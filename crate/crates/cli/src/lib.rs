//! The `amd` command line: corpus generation, training, sampling, stitching
//! baselines, evaluation and position export.
//!
//! Exit codes: 0 on success (and for `--help`), 1 for usage or configuration
//! errors, 2 for runtime failures. Outputs are written to a temporary file
//! and renamed into place, so a failed command leaves no partial artifact.

mod commands;
mod fsio;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{parse_prompts, stitch_sequence};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable selecting log verbosity: `error`, `info` or `debug`.
pub const LOG_ENV: &str = "AMD_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "amd",
    version,
    about = "Autoregressive motion diffusion pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic text-motion corpus.
    GenCorpus(GenCorpusArgs),
    /// Train the denoiser, duration predictor and/or evaluator.
    Train(TrainArgs),
    /// Generate one segment per prompt, autoregressively.
    Sample(SampleArgs),
    /// Generate a multi-prompt sequence with a chosen stitching method.
    Stitch(StitchArgs),
    /// Score generated sequences against a corpus.
    Eval(EvalArgs),
    /// Convert a sequence file to world joint positions.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of clips.
    #[arg(long)]
    pub clips: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Denoiser,
    Duration,
    Evaluator,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    /// Every record.
    All,
    /// The train part of the default 85/10/5 split.
    Train,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    pub corpus: PathBuf,
    /// `key = value` training configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to write. A single component is merged into an existing
    /// checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Component::All)]
    pub component: Component,
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    pub split: SplitChoice,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// One prompt per line, in generation order.
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Output sequence file.
    #[arg(long)]
    pub out: PathBuf,
    /// Classifier-free guidance scale.
    #[arg(long)]
    pub guidance: Option<f32>,
    /// Fixed length of every segment instead of predicted durations.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StitchMode {
    /// Autoregressive generation conditioned on the previous segment.
    Auto,
    /// Consecutive prompt pairs generated as one clip.
    Joint,
    /// Independent segments cross-faded at each junction.
    Interp,
    /// Independent segments with each junction regenerated by infilling.
    Infill,
}

impl StitchMode {
    pub fn name(self) -> &'static str {
        match self {
            StitchMode::Auto => "auto",
            StitchMode::Joint => "joint",
            StitchMode::Interp => "interp",
            StitchMode::Infill => "infill",
        }
    }
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum)]
    pub mode: StitchMode,
    /// One prompt per line, in generation order.
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Output sequence file.
    #[arg(long)]
    pub out: PathBuf,
    /// Classifier-free guidance scale.
    #[arg(long)]
    pub guidance: Option<f32>,
    /// Fixed length of every segment instead of predicted durations.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint holding a trained evaluator.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Corpus providing the real clips.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Sequence files to score.
    #[arg(long, num_args = 1.., required = true)]
    pub generated: Vec<PathBuf>,
    /// JSON report to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    /// R-precision candidate pool size.
    #[arg(long, default_value_t = 32)]
    pub pool: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    /// World joint positions per frame, as JSON.
    Positions,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Sequence file to convert.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
}

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<amd_core::Error> for Failure {
    fn from(e: amd_core::Error) -> Self {
        use amd_core::Error as E;
        match e {
            E::MissingKey(_) | E::UnknownKey(_) | E::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn init_logging() {
    let filter = std::env::var(LOG_ENV).unwrap_or_else(|_| "warn".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. The summary goes to stdout, diagnostics to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
