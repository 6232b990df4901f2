use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Measure the political leaning of chat models and the embedding drift
/// that alignment leaves behind.
#[derive(Debug, Parser)]
#[command(name = "polprobe", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Provider config file (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Replace every provider with scripted replies from this JSON file
    #[arg(long, global = true)]
    pub provider_script: Option<PathBuf>,

    /// Maximum concurrent model calls for panel and anchor fan-out
    #[arg(long, global = true, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    pub concurrency: u32,

    /// Per-request timeout in seconds
    #[arg(long, global = true, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    pub timeout: u64,

    /// Do not read or write the response cache
    #[arg(long, global = true)]
    pub no_cache: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an evaluation
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Compare embeddings of a base and a trained checkpoint
    Drift(DriftArgs),
    /// Render a stored run
    Report(ReportArgs),
    /// Generate an anchor dataset from a list of prompts
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Interview the respondent and have a panel score it on a compass
    Relative(RelativeArgs),
    /// Position the respondent against an anchor dataset
    Absolute(AbsoluteArgs),
}

#[derive(Debug, Args)]
pub struct RelativeArgs {
    /// Interviewer model, as cfg:<provider>[/<model>]
    #[arg(long)]
    pub chief: String,
    /// Model under evaluation
    #[arg(long)]
    pub respondent: String,
    /// Comma-separated scorer models
    #[arg(long, value_delimiter = ',', required = true)]
    pub panel: Vec<String>,
    #[arg(long, default_value_t = polprobe_core::relative::DEFAULT_ROUNDS, value_parser = clap::value_parser!(u32).range(1..))]
    pub rounds: u32,
    /// Optional subject to open the interview with
    #[arg(long)]
    pub topic: Option<String>,
    /// Run directory root
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Also write compass.svg into the run directory
    #[arg(long)]
    pub render: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimilarityKind {
    Embedding,
    Judge,
}

#[derive(Debug, Args)]
pub struct AbsoluteArgs {
    #[arg(long)]
    pub respondent: String,
    /// Anchor dataset (JSON Lines)
    #[arg(long)]
    pub anchors: PathBuf,
    #[arg(long, value_enum)]
    pub similarity: SimilarityKind,
    /// Embedding archive for --similarity embedding
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Judge model for --similarity judge
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Also write ternary.svg into the run directory
    #[arg(long)]
    pub render: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    L2,
    Cosine,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("query").required(true).args(["top_k", "pairs"]))]
pub struct DriftArgs {
    /// Base checkpoint embeddings (EMB1 archive)
    #[arg(long)]
    pub base: PathBuf,
    /// Trained checkpoint embeddings
    #[arg(long)]
    pub trained: PathBuf,
    /// Report the k most-moved shared tokens
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_k: Option<u64>,
    /// Concept pairs file: `word_a word_b` per line, `word=sub1+sub2` for subtokens
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "l2")]
    pub metric: MetricArg,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Svg,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run id
    #[arg(long)]
    pub run: String,
    #[arg(long, value_enum, default_value = "svg")]
    pub format: FormatArg,
    /// Run directory root
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Output file; defaults to report.<format> inside the run directory
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// One prompt per line
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub generator: String,
    /// Anchor dataset to write
    #[arg(long)]
    pub out: PathBuf,
}
