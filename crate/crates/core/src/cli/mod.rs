//! The `polyllmem` command line.
//!
//! Data goes to stdout or `--out`; logs go to stderr. Exit codes are
//! [`EXIT_OK`], [`EXIT_USAGE`], [`EXIT_DATA`] and [`EXIT_NUMERICAL`].

mod commands;
mod output;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::attribution::AttrError;
use crate::embed_store::{Modality, StoreError};
use crate::model::{CheckpointError, ModelError};
use crate::pipeline::PipelineError;
use crate::psmiles::{InvalidPsmiles, LexError, MergeError};
use crate::trainer::TrainError;

pub use output::Format;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "polyllmem", version, about = "Polymer property prediction from fused text and structure embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Master seed for every randomized stage; replaces `seed` in --config.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads for folds, grid cells and polymers.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Training configuration as JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a property CSV and re-emit it as JSON lines.
    Ingest(IngestArgs),
    /// Print the seeded train/test split and folds for one property.
    Split(SplitArgs),
    /// Replace each [*] with C, one PSMILES per stdin line.
    Cap,
    /// Chemical tokenization, one PSMILES per stdin line, tokens tab-separated.
    Tokenize,
    /// Embedding file utilities.
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Five-fold cross-validated training for one property.
    Train(TrainArgs),
    /// Cross-validate every configuration of a hyperparameter grid.
    Gridsearch(GridArgs),
    /// Score a checkpoint against labelled data.
    Evaluate(EvaluateArgs),
    /// Predict with a checkpoint for every polymer in the embedding files.
    Predict(PredictArgs),
    /// Linear baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Integrated-gradients token attribution.
    Attribute(AttributeArgs),
    /// Token cosine similarity matrix and edge list for one polymer.
    Similarity(SimilarityArgs),
    /// Principal components of pooled embeddings.
    Pca(PcaArgs),
    /// Merge run reports into one table keyed by property.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV (or JSON-lines) dataset.
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub property: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Text,
    Structure,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Text => Modality::TextLlm,
            ModalityArg::Structure => Modality::Structure3d,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum EmbedCommand {
    /// Deterministic synthetic embeddings for a dataset (requires --out).
    Synth(SynthArgs),
    /// Check an embedding file; prints the failure code on error.
    Validate(FileArg),
    /// Print an embedding file's metadata.
    Info(FileArg),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub modality: ModalityArg,
    /// Vector width; defaults to 4096 for text and 1536 for structure.
    #[arg(long)]
    pub dim: Option<u32>,
    /// Write a token-level PLYT file instead of pooled PLYE.
    #[arg(long)]
    pub tokens: bool,
    /// Overwrite the leading dimensions with structural count features.
    #[arg(long)]
    pub plant: bool,
    #[arg(long, default_value = "synthetic")]
    pub source_tag: String,
}

#[derive(Debug, Args)]
pub struct FileArg {
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV or JSON-lines dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub property: String,
    /// Pooled text embeddings (PLYE).
    #[arg(long)]
    pub llm: PathBuf,
    /// Pooled structure embeddings (PLYE).
    #[arg(long)]
    pub uni: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Save each fold's selected checkpoint here.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Grid as JSON; defaults to the published 128-cell grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    /// The held-out test split under the checkpoint's seed.
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the checkpoint's property.
    #[arg(long)]
    pub property: Option<String>,
    #[arg(long)]
    pub llm: PathBuf,
    #[arg(long)]
    pub uni: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub llm: PathBuf,
    #[arg(long)]
    pub uni: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Ridge regression on concatenated embeddings over the same folds.
    Ridge(RidgeArgs),
}

#[derive(Debug, Args)]
pub struct RidgeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidate penalties, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Token-level text embeddings (PLYT).
    #[arg(long)]
    pub tokens_file: PathBuf,
    /// Pooled structure embeddings (PLYE), held fixed during integration.
    #[arg(long)]
    pub uni: PathBuf,
    /// Polymers to explain, comma-separated; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<String>>,
    #[arg(long, default_value_t = crate::attribution::DEFAULT_STEPS)]
    pub steps: usize,
    /// Sum subword scores into chemical tokens.
    #[arg(long)]
    pub refine: bool,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub tokens_file: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    /// PLYE file, or PLYT file to mean-pool.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, short = 'k', default_value_t = 100)]
    pub components: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// RunReport or GridReport JSON files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            _ if e.is_numerical() => CliError::Numerical(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AttrError> for CliError {
    fn from(e: AttrError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(PipelineError, StoreError, CheckpointError, MergeError, InvalidPsmiles, LexError);

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    init_logging(cli.global.verbose);
    match commands::dispatch(&cli, stdin, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: bool) {
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Trace)
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .try_init();
    log::set_max_level(if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn });
}
