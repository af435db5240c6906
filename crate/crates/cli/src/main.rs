//! `capeval`: score captions from stored embeddings, correlate scores with
//! human ratings, run the classification-style tasks, select machine
//! translations and finetune a linear embedding adapter.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use capeval::embedding_store::Split;
use capeval::resampling::StrataKey;
use capeval::task_harness::{PairwiseMetric, PercentileMode};
use capeval::ErrorClass;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "capeval", version, about = "Embedding-driven evaluation of image-caption metrics")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Root seed; every random stream is derived from it
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (defaults to available parallelism)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Directory for output files
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// CLIPScore re-scaling weight
    #[arg(long, global = true, default_value_t = capeval::metric_core::DEFAULT_W)]
    pub w: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score candidate captions against their images
    Score(ScoreArgs),
    /// Correlate metric scores with human ratings
    Correlate(CorrelateArgs),
    /// Run a classification-style task
    #[command(subcommand)]
    Task(TaskCommand),
    /// Cross-language correlation matrix of per-instance scores
    Heatmap(HeatmapArgs),
    /// Pick the best machine translation per source and language
    MtSelect(MtSelectArgs),
    /// Train the linear embedding adapter
    Finetune(FinetuneArgs),
}

#[derive(Args, Debug, Clone)]
pub struct StoreArgs {
    /// Image embedding store (CAPEVEC1)
    #[arg(long)]
    pub images: PathBuf,

    /// Text embedding store (CAPEVEC1)
    #[arg(long)]
    pub texts: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub stores: StoreArgs,

    /// Rated pairs (JSONL)
    #[arg(long)]
    pub pairs: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricArg {
    Clipscore,
    Refclipscore,
}

impl From<MetricArg> for PairwiseMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Clipscore => PairwiseMetric::Clipscore,
            MetricArg::Refclipscore => PairwiseMetric::Refclipscore,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrataArg {
    RatingValue,
    Language,
    None,
}

impl From<StrataArg> for StrataKey {
    fn from(s: StrataArg) -> Self {
        match s {
            StrataArg::RatingValue => StrataKey::RatingValue,
            StrataArg::Language => StrataKey::Language,
            StrataArg::None => StrataKey::None,
        }
    }
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    /// Score CSV written by `score`
    #[arg(long)]
    pub scores: PathBuf,

    /// Rated pairs (JSONL) carrying the human ratings
    #[arg(long)]
    pub pairs: PathBuf,

    #[arg(long, value_enum, default_value_t = MetricArg::Clipscore)]
    pub metric: MetricArg,

    /// Rating-scale size for tau_c (defaults to the number of distinct ratings)
    #[arg(long)]
    pub m: Option<u64>,

    /// Report each language separately plus a macro average
    #[arg(long)]
    pub per_language: bool,

    /// Add stratified bootstrap standard deviations
    #[arg(long)]
    pub bootstrap: bool,

    #[arg(long, default_value_t = 1000)]
    pub boot_iters: usize,

    #[arg(long, default_value_t = 0.8)]
    pub boot_frac: f64,

    #[arg(long, value_enum, default_value_t = StrataArg::RatingValue)]
    pub strata: StrataArg,
}

#[derive(Args, Debug)]
pub struct TaskData {
    #[command(flatten)]
    pub stores: StoreArgs,

    /// Task records (JSONL)
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum XvnliTask {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarvlTask {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Subcommand, Debug)]
pub enum TaskCommand {
    /// Caption versus foil
    Valse(TaskData),
    /// Entailment ordering on shared images
    Xvnli {
        #[command(flatten)]
        data: TaskData,
        #[arg(long, value_enum, default_value_t = XvnliTask::All)]
        task: XvnliTask,
    },
    /// Two-image captions
    Marvl {
        #[command(flatten)]
        data: TaskData,
        #[arg(long, value_enum, default_value_t = MarvlTask::All)]
        task: MarvlTask,
    },
    /// Pairwise human preference
    Pascal {
        #[command(flatten)]
        data: TaskData,
        #[arg(long, value_enum, default_value_t = MetricArg::Clipscore)]
        metric: MetricArg,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    All,
    Bottom25,
    Top25,
}

impl From<ModeArg> for PercentileMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::All => PercentileMode::All,
            ModeArg::Bottom25 => PercentileMode::Bottom25,
            ModeArg::Top25 => PercentileMode::Top25,
        }
    }
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    /// Score CSV written by `score`
    #[arg(long)]
    pub scores: PathBuf,

    /// Selected translations (JSONL from `mt-select`) supplying QE scores
    #[arg(long)]
    pub qe: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = ModeArg::All)]
    pub mode: ModeArg,
}

#[derive(Args, Debug)]
pub struct MtSelectArgs {
    /// Translation candidates (JSONL)
    #[arg(long)]
    pub candidates: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossArg {
    Contrastive,
    Pearson,
    Combined,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub stores: StoreArgs,

    /// Rated pairs (JSONL); references also serve as contrastive pairs
    #[arg(long)]
    pub pairs: PathBuf,

    /// Extra matching captions (JSONL of `{"image_id", "caption_id"}`)
    #[arg(long)]
    pub captions: Option<PathBuf>,

    /// Train only on rated pairs from this split
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, default_value_t = 5)]
    pub epochs: usize,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    #[arg(long, value_enum, default_value_t = LossArg::Combined)]
    pub loss: LossArg,

    /// Weight of the Pearson term in combined mode
    #[arg(long, default_value_t = 1.0)]
    pub pearson_weight: f64,

    /// Feed w * cos into the Pearson loss instead of the clamped score
    #[arg(long)]
    pub pearson_raw_cos: bool,

    /// Also write the adapted image and text stores
    #[arg(long)]
    pub export: bool,
}

/// Failure of a subcommand, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(capeval::Error),
}

impl From<capeval::Error> for CliError {
    fn from(e: capeval::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

fn configure_pool(jobs: Option<usize>) -> Result<(), CliError> {
    let Some(n) = jobs else {
        return Ok(());
    };
    if n == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_pool(cli.global.jobs)?;
    let g = &cli.global;
    match cli.command {
        Command::Score(args) => commands::score::run(g, &args),
        Command::Correlate(args) => commands::correlate::run(g, &args),
        Command::Task(task) => commands::task::run(g, &task),
        Command::Heatmap(args) => commands::heatmap::run(g, &args),
        Command::MtSelect(args) => commands::mt_select::run(g, &args),
        Command::Finetune(args) => commands::finetune::run(g, &args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
