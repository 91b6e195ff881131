//! The `rrt` command line. Every stage reads and writes files, so each one
//! can be re-run and diffed on its own:
//!
//! ```text
//! synth -> index -> retrieve -> train -> rerank -> eval / compare / ablate
//! ```

mod commands;
mod config;
mod error;
mod files;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use error::CliError;
pub use files::{meta_path, GALLERY_FILE, MANIFEST_FILE, PARTS_FILE, QUERIES_FILE};

#[derive(Parser, Debug)]
#[command(name = "rrt", version, about = "Global retrieval with transformer, geometric and query-expansion reranking")]
pub struct Cli {
    /// Worker threads for scoring and evaluation [default: available parallelism]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// File of `key = value` lines using this command's long flag names; flags on the command line win [default: none]
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress to stderr
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-part synthetic dataset
    Synth(SynthArgs),
    /// Build a global descriptor index from the gallery
    Index(IndexArgs),
    /// Exact k-NN retrieval of every query over the gallery
    Retrieve(RetrieveArgs),
    /// Train a reranking transformer on labelled images
    Train(TrainArgs),
    /// Rerank the top of each neighbor list with a pairwise scorer
    Rerank(RerankArgs),
    /// Score one neighbor file against the labels
    Eval(EvalArgs),
    /// Side-by-side metrics for several neighbor files
    Compare(CompareArgs),
    /// Rerank with the first c locals per image for several c
    Ablate(AblateArgs),
    /// Dump one-to-one local matches read from the model's attention
    Correspond(CorrespondArgs),
}

/// Where descriptor files are found.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset directory as written by `rrt synth`
    #[arg(long, default_value = ".")]
    pub data: PathBuf,
    /// Query descriptor file [default: <data>/queries.rrtd]
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Gallery descriptor file [default: <data>/gallery.rrtd]
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Part prototypes used by the oracle scorer [default: <data>/parts.rrtd]
    #[arg(long)]
    pub parts: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthPreset {
    /// Evaluation split of the frozen benchmark
    Benchmark,
    /// Training split of the frozen benchmark
    BenchmarkTrain,
    /// A handful of tiny images
    Small,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Generator preset that the flags below override
    #[arg(long, value_enum, default_value_t = SynthPreset::Benchmark)]
    pub preset: SynthPreset,
    /// Generator seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of object instances [default: preset]
    #[arg(long)]
    pub instances: Option<usize>,
    /// Gallery images per instance [default: preset]
    #[arg(long)]
    pub gallery_per_instance: Option<usize>,
    /// Query images per instance [default: preset]
    #[arg(long)]
    pub queries_per_instance: Option<usize>,
    /// Part prototypes owned by each instance [default: preset]
    #[arg(long)]
    pub parts_per_instance: Option<usize>,
    /// Parts visible in each image [default: preset]
    #[arg(long)]
    pub parts_per_image: Option<usize>,
    /// Local descriptors per image, distractors included [default: preset]
    #[arg(long)]
    pub locals_per_image: Option<usize>,
    /// Local descriptor dimension [default: preset]
    #[arg(long)]
    pub local_dim: Option<u16>,
    /// Raw global descriptor dimension [default: preset]
    #[arg(long)]
    pub global_dim: Option<u32>,
    /// Instance pairs sharing one global prototype [default: preset]
    #[arg(long)]
    pub confusion_pairs: Option<usize>,
    /// Norm of the noise added to global prototypes [default: preset]
    #[arg(long)]
    pub global_noise: Option<f32>,
    /// Norm of the noise added to part descriptors [default: preset]
    #[arg(long)]
    pub local_noise: Option<f32>,
    /// Pixel jitter of part positions [default: preset]
    #[arg(long)]
    pub position_jitter: Option<f32>,
}

#[derive(Args, Debug, Clone)]
pub struct IndexArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Index the model's projected globals instead of the raw ones [default: raw]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Index file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Prebuilt index [default: built from the gallery]
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Project globals with this model before searching [default: raw globals]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Neighbors kept per query
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Neighbor JSONL file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    /// Small model and recipe matched to the synthetic benchmark
    Benchmark,
    /// Full-size architecture and optimizer settings
    Full,
    /// Smallest model, for smoke tests
    Tiny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Fixed learning rate
    Constant,
    /// Divide by 10 after 60% and again after 80% of the epochs
    Step,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to write; rewritten after every epoch
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log [default: <out>.loss.csv]
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Architecture and recipe that the flags below override
    #[arg(long, value_enum, default_value_t = ModelPreset::Benchmark)]
    pub preset: ModelPreset,
    /// Seed for initialization and pair sampling
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Local descriptors per image seen by the model [default: preset]
    #[arg(long)]
    pub locals_max: Option<usize>,
    /// Token width [default: preset]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Attention heads [default: preset]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Width of one head [default: preset]
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Transformer layers [default: preset]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden width of each layer's MLP [default: preset]
    #[arg(long)]
    pub mlp_dim: Option<usize>,
    /// Add a fixed sinusoidal code of each local's position
    #[arg(long)]
    pub pos_embed: bool,
    /// Leave the projected global descriptors out of the sequence
    #[arg(long)]
    pub no_global_token: bool,
    /// Drop the learned scale embedding
    #[arg(long)]
    pub no_scale_embed: bool,
    /// Add the attention output back after each MLP
    #[arg(long)]
    pub mlp_residual: bool,
    /// Training epochs [default: preset]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate [default: preset]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay [default: preset]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Anchors per step; each contributes one positive and one negative pair [default: preset]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Cap on steps per epoch [default: preset]
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Global neighbors per image from which negatives are drawn [default: preset]
    #[arg(long)]
    pub neg_pool: Option<usize>,
    /// Clip the global gradient norm to this value, 0 turns clipping off [default: preset]
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Learning rate schedule [default: preset]
    #[arg(long, value_enum)]
    pub schedule: Option<Schedule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Scorer {
    /// Transformer pair similarity
    #[value(name = "rrt")]
    #[serde(rename = "rrt")]
    Rrt,
    /// RANSAC homography inliers over mutual nearest-neighbor matches
    #[value(name = "gv")]
    #[serde(rename = "gv")]
    Gv,
    /// Alpha-weighted query expansion and a fresh search
    #[value(name = "aqe")]
    #[serde(rename = "aqe")]
    Aqe,
    /// Query expansion, then transformer reranking
    #[value(name = "aqe+rrt")]
    #[serde(rename = "aqe+rrt")]
    AqeRrt,
    /// Count of shared synthetic parts
    #[value(name = "oracle")]
    #[serde(rename = "oracle")]
    Oracle,
}

/// Knobs of the baseline scorers.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ScorerArgs {
    /// Neighbors folded into the expanded query
    #[arg(long, default_value_t = 2)]
    pub nqe: usize,
    /// Exponent on neighbor similarity in query expansion
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    /// RANSAC hypotheses per pair
    #[arg(long, default_value_t = 2000)]
    pub ransac_iters: usize,
    /// Inlier bound on the symmetric transfer error, in pixels
    #[arg(long, default_value_t = 3.0)]
    pub ransac_thresh: f64,
    /// Ratio bound for descriptor matches [default: off]
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Seed of the RANSAC sampler
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Smallest cosine for assigning a local to a part in the oracle
    #[arg(long, default_value_t = 0.75)]
    pub min_cos: f32,
}

#[derive(Args, Debug, Clone)]
pub struct RerankArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Neighbor JSONL file to rerank
    #[arg(long)]
    pub neighbors: PathBuf,
    /// Pairwise scorer
    #[arg(long, value_enum, default_value_t = Scorer::Rrt)]
    pub scorer: Scorer,
    /// Rerank depth; 0 leaves every list unchanged
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Model for rrt and aqe+rrt [default: none]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Locals kept per image before scoring [default: model capacity for rrt, all otherwise]
    #[arg(long)]
    pub locals_max: Option<usize>,
    #[command(flatten)]
    pub scorers: ScorerArgs,
    /// Neighbor JSONL file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Metric cut-offs.
#[derive(Args, Debug, Clone, Serialize)]
pub struct MetricArgs {
    /// Depths for truncated mAP
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub map_k: Vec<usize>,
    /// Depths for recall
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub recall_k: Vec<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Neighbor JSONL file to score
    #[arg(long)]
    pub neighbors: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Report file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Report format [default: csv for a .csv output, json otherwise]
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
    /// Record wall-clock time in the report, which makes it vary between runs
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Neighbor JSONL files, one row each
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub neighbors: Vec<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Table file to write [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationScorer {
    Rrt,
    Gv,
    Oracle,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// First-stage neighbor JSONL file
    #[arg(long)]
    pub neighbors: PathBuf,
    /// Pairwise scorer
    #[arg(long, value_enum, default_value_t = AblationScorer::Rrt)]
    pub scorer: AblationScorer,
    /// Model for the rrt scorer [default: none]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Local counts to try [default: 0, L/8, L/4, L/2 and L for L the model capacity or the largest image]
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Cell size in pixels for counting distinct local positions
    #[arg(long, default_value_t = 16)]
    pub grid_stride: u32,
    /// Rerank depth
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[command(flatten)]
    pub scorers: ScorerArgs,
    /// Table file to write, JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CorrespondArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Id of the first image, looked up among queries then gallery
    #[arg(long)]
    pub query_id: u32,
    /// Id of the second image, looked up in the gallery then queries
    #[arg(long)]
    pub gallery_id: u32,
    /// JSON file to write [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), folds in the config file and runs the
/// command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cmd = Cli::command();
    let matches = cmd.clone().try_get_matches_from(&argv)?;
    let config_path = matches
        .subcommand()
        .and_then(|(_, sub)| sub.get_one::<PathBuf>("config"))
        .or_else(|| matches.get_one::<PathBuf>("config"))
        .cloned();
    let cli = match config_path {
        Some(path) => {
            let merged = config::merge(argv, &cmd, &matches, &path)?;
            Cli::from_arg_matches(&cmd.try_get_matches_from(merged)?)?
        }
        None => Cli::from_arg_matches(&matches)?,
    };
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| commands::dispatch(cli.command))
}
