//! Token attribution against a linear decision boundary, nearest-neighbour
//! lookup in embedding space, and highlighted rendering.

mod ablation;
mod neighbors;
mod render;

use thiserror::Error;

pub use ablation::{aggregate_scores, token_ablation_scores, AggregateEntry, AttributionEntry, AttributionReport};
pub use neighbors::{nearest_neighbors, Neighbor, NeighborList};
pub use render::{html_document, render_highlight, HighlightFormat};

use crate::embedder::EmbedderError;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("attribution needs a linear model, got {0}")]
    ModelMismatch(String),
    #[error("model expects {expected} features, embeddings have {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("document {0} has no non-empty line")]
    EmptyDocument(String),
    #[error("unknown document id {0:?}")]
    UnknownId(String),
    #[error("asked for {n} neighbours but only {available} other rows exist")]
    NTooLarge { n: usize, available: usize },
    #[error("report is for document {report:?}, not {doc:?}")]
    MismatchedReport { report: String, doc: String },
    #[error("no attribution reports to aggregate")]
    NoReports,
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
}
