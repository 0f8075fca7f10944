//! Two-dimensional t-SNE maps of request embeddings and their scatter plots.

mod pca;
mod plot;
mod tsne;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

pub use pca::principal_subspace;
pub use plot::{emit_scatter, kl_trace_csv, scatter_csv, scatter_svg, ScatterFormat};
pub use tsne::{conditional_affinities, joint_affinities, tsne, tsne_array, Affinities, Projection};

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("perplexity {perplexity} must lie in (1, {limit:.3}) for {n} points")]
    PerplexityTooLarge { perplexity: f64, n: usize, limit: f64 },
    #[error("all input rows are identical")]
    DegenerateInput,
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid projection config: {0}")]
    InvalidConfig(String),
    #[error("nothing to plot")]
    EmptyPoints,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches to `final_momentum`.
    pub momentum_switch: usize,
    /// Dimensions kept by the PCA step; 0 disables it.
    pub pca_predim: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            pca_predim: 50,
            seed: 0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self, n: usize) -> Result<(), ProjectError> {
        if n < 4 {
            return Err(ProjectError::TooFewPoints(n));
        }
        let limit = (n as f64 - 1.0) / 3.0;
        if !(self.perplexity > 1.0 && self.perplexity < limit) {
            return Err(ProjectError::PerplexityTooLarge {
                perplexity: self.perplexity,
                n,
                limit,
            });
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) || !(self.exaggeration >= 1.0) {
            return Err(ProjectError::InvalidConfig(
                "iterations ≥ 1, learning_rate > 0 and exaggeration ≥ 1 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub doc_id: String,
    pub x: f64,
    pub y: f64,
    pub label: Label,
}
