//! `reqvec`: one subcommand per pipeline stage, all sharing an artifact
//! directory.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reqvec_core::classify::ClassifierKind;
use reqvec_core::corpus::{Label, ProfileName, Split};
use reqvec_core::explain::HighlightFormat;
use reqvec_core::Pooling;

#[derive(Debug, Parser)]
#[command(name = "reqvec", version, about = "HTTP request embeddings for anomaly detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Directory holding every artifact.
    #[arg(long, global = true, env = "REQVEC_ARTIFACTS", default_value = "artifacts")]
    pub artifacts: PathBuf,
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    /// One JSON record per line.
    Jsonl,
    /// A directory of raw request dumps.
    Raw,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RawMode {
    /// Each block starts with a request line.
    Full,
    /// Any non-empty text, one line per document.
    Lines,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a raw or JSONL corpus, normalize it and store it as JSONL.
    Import {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "raw")]
        format: InputFormat,
        #[arg(long)]
        profile: Option<ProfileName>,
        /// Label for every raw request; inferred from file names otherwise.
        #[arg(long)]
        label: Option<Label>,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, value_enum, default_value = "full")]
        mode: RawMode,
    },
    /// Generate synthetic train and inference corpora.
    Synth {
        #[arg(long)]
        normal_train: Option<usize>,
        #[arg(long)]
        normal: Option<usize>,
        #[arg(long)]
        anomaly: Option<usize>,
    },
    /// Learn byte-level BPE merges on the train corpus.
    TrainTokenizer {
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Pretrain the encoder with masked-token prediction.
    TrainLm(TrainLmArgs),
    /// Embed the inference corpus.
    Embed {
        #[arg(long)]
        pooling: Option<Pooling>,
    },
    /// Fit a classifier on all inference embeddings.
    TrainClf {
        #[arg(long)]
        model: Option<ClassifierKind>,
    },
    /// Stratified k-fold evaluation with a metrics table and ROC curves.
    Eval {
        #[arg(long)]
        folds: Option<usize>,
        /// Repeat to compare classifiers.
        #[arg(long)]
        model: Vec<ClassifierKind>,
    },
    /// Token-ablation attribution for one or more documents.
    Explain {
        /// Repeat for several documents; defaults to the first anomalies.
        #[arg(long)]
        doc_id: Vec<String>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, default_value = "ansi")]
        format: HighlightFormat,
        #[arg(long)]
        model: Option<ClassifierKind>,
    },
    /// Nearest inference documents in embedding space.
    Neighbors {
        #[arg(long)]
        doc_id: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        include_self: bool,
    },
    /// 2-D t-SNE map of the embeddings as CSV and SVG.
    Project {
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
