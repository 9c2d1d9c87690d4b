//! `samlm`: corpus preparation, training, evaluation and generation for
//! attribute-modulated GRU language models.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use samlm_core::genapp::Strategy;
use samlm_core::model::Variant;

#[derive(Parser, Debug)]
#[command(name = "samlm", version, about = "Attribute-modulated GRU language models")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (splits, initialization, shuffling, LDA, sampling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read a JSONL corpus, split it and build the vocabulary and attribute lists.
    Ingest(IngestArgs),
    /// Label documents with their largest-weight LDA topic as the category.
    LdaLabel(LdaArgs),
    /// Train a model variant with early stopping on validation NLL.
    Train(TrainArgs),
    /// Perplexity of a checkpoint or n-gram model on a split.
    Eval(EvalArgs),
    /// Per-word NLL change between two models, grouped by category.
    WordDelta(WordDeltaArgs),
    /// Fit and evaluate the Kneser-Ney n-gram baseline.
    Ngram(NgramArgs),
    /// Generate text under the given attributes.
    Generate(GenerateArgs),
    /// Regenerate with the author replaced and measure the shift.
    Vary(VaryArgs),
    /// Write the attention trace of one document as CSV.
    ExportAttn(ExportArgs),
    /// Finite-difference gradient check of every variant.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct DataArg {
    /// Prepared data directory (output of `ingest`).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// JSONL corpus; split into train/valid/test unless --valid and --test are given.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH", requires = "test")]
    pub valid: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "valid")]
    pub test: Option<PathBuf>,
    /// Vocabulary cap including the three special tokens.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Train,valid,test ratios, e.g. 0.8,0.1,0.1.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct LdaArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Words per topic in top_words.txt.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// RNN, RNN-State, RNN-BOW, SAM-Cat, SAM-Title-Att, SAM-Title-Att-State,
    /// SAM-Au-Att, SAM-Title-Au-Att or SAM-Title-State-Au-Att.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub attr_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    /// Disable gradient-norm clipping.
    #[arg(long)]
    pub no_clip: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Checkpoint file or n-gram model directory.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct WordDeltaArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Baseline: checkpoint file or n-gram directory.
    #[arg(long, value_name = "PATH")]
    pub model_a: PathBuf,
    /// Compared model: checkpoint file or n-gram directory.
    #[arg(long, value_name = "PATH")]
    pub model_b: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Mean NLL change (nats) separating improved/worse from alike.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    /// Words per bucket shown on stdout.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Args, Debug)]
pub struct NgramArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    /// Checkpoint to generate from.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// File holding the title (whitespace-separated tokens).
    #[arg(long, value_name = "PATH", conflicts_with = "title_text")]
    pub title: Option<PathBuf>,
    /// Title given inline.
    #[arg(long, value_name = "TEXT")]
    pub title_text: Option<String>,
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Greedy)]
    pub strategy: StrategyArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum StrategyArg {
    Greedy,
    Sample,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Sample => Strategy::Sample,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(long)]
    pub author: Option<String>,
}

#[derive(Args, Debug)]
pub struct VaryArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Substituted author.
    #[arg(long)]
    pub author: String,
    /// Author of the original generation; defaults to the source document's
    /// author, else the unknown-author embedding.
    #[arg(long)]
    pub from_author: Option<String>,
    /// Take title, author and category from this document id.
    #[arg(long)]
    pub doc: Option<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Document id within the split.
    #[arg(long)]
    pub doc: String,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum Dims {
    /// d=4, attribute width 3, vocabulary 7, title 2 words, document 3 tokens.
    Tiny,
    /// d=8, attribute width 6, vocabulary 12, title 3 words, document 5 tokens.
    Small,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Dims::Tiny)]
    pub dims: Dims,
    /// Check one variant instead of all.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Multiply the initial weights by this factor before checking.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SAMLM_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("SAMLM_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match init_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
