use std::path::Path;

use reqvec_core::classify::ClassifyError;
use reqvec_core::corpus::CorpusError;
use reqvec_core::embedder::EmbedderError;
use reqvec_core::encoder::EncoderError;
use reqvec_core::explain::ExplainError;
use reqvec_core::project::ProjectError;
use reqvec_core::tokenizer::TokenizerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("tokenizer: {0}")]
    Tokenizer(#[from] TokenizerError),
    #[error("encoder: {0}")]
    Encoder(#[from] EncoderError),
    #[error("embedder: {0}")]
    Embedder(#[from] EmbedderError),
    #[error("classifier: {0}")]
    Classify(#[from] ClassifyError),
    #[error("explain: {0}")]
    Explain(#[from] ExplainError),
    #[error("projection: {0}")]
    Project(#[from] ProjectError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

impl CliError {
    /// Usage errors exit with 2 from the argument parser itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Corpus(_) => 3,
            CliError::Tokenizer(_) => 4,
            CliError::Encoder(_) => 5,
            CliError::Embedder(_) => 6,
            CliError::Classify(_) => 7,
            CliError::Explain(_) => 8,
            CliError::Project(_) => 9,
            CliError::Io { .. } => 10,
            CliError::Config(_) => 11,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
