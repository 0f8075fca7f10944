//! Unsupervised vector representations of HTTP requests.
//!
//! The pipeline runs in stages, each with its own module:
//!
//! * [`corpus`]: parse, normalize, label, split and synthesize request corpora.
//! * [`tokenizer`]: byte-level BPE trained over the corpus, total over arbitrary bytes.
//! * [`encoder`]: a small transformer encoder trained with masked language modeling.
//! * [`embedder`]: request vectors built from the last four encoder layers.
//! * [`classify`]: logistic regression, linear SVM and random forest plus the metric suite.
//! * [`explain`]: token-ablation attribution, nearest neighbours and highlighting.
//! * [`project`]: exact t-SNE and scatter-plot output.

pub mod binfile;
pub mod classify;
pub mod corpus;
pub mod embedder;
pub mod encoder;
pub mod explain;
pub mod project;
pub mod rng;
pub mod tokenizer;

pub use classify::{EvalReport, ForestModel, LinearKind, LinearModel};
pub use corpus::{Corpus, HttpRequestDoc, Label, NormalizationProfile, Split};
pub use embedder::{EmbeddingMatrix, EmbeddingVector, Pooling};
pub use encoder::{EncoderConfig, EncoderParams, LossTrace, TrainConfig};
pub use explain::{AttributionReport, NeighborList};
pub use project::{ProjectionConfig, ProjectionPoint};
pub use tokenizer::BbpeVocab;
