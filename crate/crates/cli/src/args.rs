use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "mmel",
    version,
    about = "Gradient attribution with semantic enhancement for a small dual encoder"
)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Generate a deterministic weight file.
    GenWeights(GenWeightsArgs),
    /// Attribution heatmaps and scores for one image-text pair.
    Attribute(AttributeArgs),
    /// Confidence drop/increase and deletion/insertion AUCs.
    Evaluate(EvaluateArgs),
    /// Progressive occlusion of the top-ranked patches.
    Occlude(OccludeArgs),
    /// Cascading weight-randomization sanity check.
    Sanity(SanityArgs),
    /// Runtime of the enhanced pipeline relative to the baseline.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Weight file (written by gen-weights, read by every other verb).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PairArgs {
    /// Binary PPM input at the model's image size.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EnhanceArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub temperature: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Blend weight of the patch-token similarity in the differentiated score.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Pgm,
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct GenWeightsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// May be repeated; each image is one sample.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub retain: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Sample seeds for the planted scorer: `N`, `A..B` or `a,b,c`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct OccludeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
    /// Comma-separated occlusion fractions.
    #[arg(long, allow_negative_numbers = true)]
    pub levels: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SanityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
    /// Randomization seeds: `N` (0..N), `A..B` or `a,b,c`.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
    #[arg(long)]
    pub repetitions: Option<usize>,
}
