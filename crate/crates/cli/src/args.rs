use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vgen", version, about = "Toy-scale video generation tools")]
pub struct Cli {
    /// TOML run configuration merged over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random stream; falls back to the config file, then
    /// OS2_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Preprocess and tier-filter a clip corpus.
    Filter(FilterArgs),
    /// Histograms and word counts over filtered records.
    Stats(StatsArgs),
    /// Recompute bucket token caps for a compression spec.
    BucketPlan(BucketPlanArgs),
    /// Batch size per token configuration under a cost model.
    BatchSearch(BatchSearchArgs),
    /// GPU cost of the training stages.
    Cost(CostArgs),
    /// Train a toy model and save its weight manifest.
    TrainToy(TrainArgs),
    /// Sample from a trained toy model.
    Sample(SampleArgs),
    /// Image-to-video sampling from a model trained with `--task square-i2v`.
    I2vSample(I2vArgs),
    /// Verifier-guided search over noise injections.
    ScaleSearch(ScaleArgs),
    /// Finite-difference check of a tensor primitive.
    GradCheck(GradCheckArgs),
    /// Generator tokens for a video size.
    TokenCount(TokenCountArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Corpus directory holding `metadata.jsonl` (default: the output
    /// directory's `corpus/`, generated when `--synth` is set).
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Metadata file; overrides `<corpus>/metadata.jsonl`.
    #[arg(long, value_name = "FILE")]
    pub metadata: Option<PathBuf>,
    /// Generate the synthetic 60-clip corpus with planted defects first.
    #[arg(long)]
    pub synth: bool,
    /// Clean clips in the synthetic corpus.
    #[arg(long, default_value_t = 38)]
    pub clean: usize,
    /// Tier whose id list is printed, by name or 0-based index.
    #[arg(long)]
    pub tier: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// `records.jsonl` written by `filter`.
    #[arg(long, value_name = "FILE")]
    pub records: PathBuf,
}

#[derive(Debug, Args)]
pub struct BucketPlanArgs {
    /// `low`, `high`, or a JSON-lines file of buckets. Defaults to the
    /// config's `[[buckets]]`, else `low`.
    #[arg(long)]
    pub buckets: Option<String>,
    /// Compression preset (`hunyuan` or `dcae`).
    #[arg(long, default_value = "hunyuan")]
    pub spec: String,
}

#[derive(Debug, Args)]
pub struct BatchSearchArgs {
    /// Tokens per sample, one per configuration.
    #[arg(long, required = true, value_delimiter = ',')]
    pub tokens: Vec<usize>,
    /// JSON cost model; defaults to `[cost_model]` in the config.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = vgen_core::sched_cost::MAX_BATCH)]
    pub max_batch: usize,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// `paper` or a JSON-lines file of stages. Defaults to the config's
    /// `[[stages]]`, else `paper`.
    #[arg(long)]
    pub stages: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Gaussian,
    Square,
    SquareI2v,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "square")]
    pub task: Task,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Weight manifest directory written by `train-toy`.
    #[arg(long, value_name = "DIR")]
    pub weights: PathBuf,
    #[arg(long, default_value = "a square moving right")]
    pub caption: String,
    /// Sampler steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Text guidance scale.
    #[arg(long)]
    pub g_txt: Option<f64>,
    /// Clips (or values, for the Gaussian task) to draw.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Single,
    Decoupled,
}

#[derive(Debug, Args)]
pub struct I2vArgs {
    #[arg(long, value_name = "DIR")]
    pub weights: PathBuf,
    /// Clip whose first frame conditions the sample; unconditioned if omitted.
    #[arg(long, value_name = "FILE")]
    pub image: Option<PathBuf>,
    #[arg(long, default_value = "a square moving right")]
    pub caption: String,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub g_img: Option<f64>,
    #[arg(long)]
    pub g_txt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContinuationArg {
    BranchPoint,
    LookaheadEnd,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[arg(long, value_name = "DIR")]
    pub weights: PathBuf,
    #[arg(long, default_value = "a square moving right")]
    pub caption: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub g_txt: Option<f64>,
    /// 1-based injection steps.
    #[arg(long, value_delimiter = ',')]
    pub inject: Option<Vec<usize>>,
    #[arg(long)]
    pub variations: Option<usize>,
    #[arg(long)]
    pub lookahead: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Six comma-separated verifier weights.
    #[arg(long, value_delimiter = ',')]
    pub verifier_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub continuation: Option<ContinuationArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Primitive to check, or `all`.
    #[arg(long, default_value = "all")]
    pub op: String,
    /// Operand shape such as `3x4`; repeat for each operand.
    #[arg(long = "shape")]
    pub shapes: Vec<String>,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: PrecisionArg,
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct TokenCountArgs {
    #[arg(long)]
    pub frames: usize,
    /// Square frame side; use `--height`/`--width` otherwise.
    #[arg(long, conflicts_with_all = ["height", "width"])]
    pub size: Option<usize>,
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    /// Compression preset.
    #[arg(long, default_value = "hunyuan")]
    pub spec: String,
}
