use std::collections::BTreeMap;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::classify::{LinearModel, Model};
use crate::corpus::HttpRequestDoc;
use crate::embedder::{Embedder, EMPTY_LINE};
use crate::tokenizer::{TokenId, BYTE_OFFSET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionEntry {
    pub token_id: TokenId,
    pub token: String,
    pub occurrences: usize,
    /// Signed distance to the hyperplane with every occurrence removed.
    pub distance: f64,
    /// `distance` min-max scaled over the report, in `[0, 1]`.
    pub scaled: f64,
    /// Mean of the scaled distances minus this entry's; positive values
    /// mark tokens whose removal moves the request towards the normal side.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub doc_id: String,
    /// Signed distance of the unmodified request.
    pub base_distance: f64,
    /// Set when every ablated variant had the same distance; all scores are
    /// then zero.
    pub degenerate_scale: bool,
    /// One entry per distinct token, in order of first occurrence.
    pub entries: Vec<AttributionEntry>,
}

impl AttributionReport {
    /// Entries by descending score, ties by token text.
    pub fn ranked(&self) -> Vec<&AttributionEntry> {
        let mut out: Vec<&AttributionEntry> = self.entries.iter().collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.token.cmp(&b.token)));
        out
    }

    pub fn score_of(&self, token_id: TokenId) -> Option<f64> {
        self.entries.iter().find(|e| e.token_id == token_id).map(|e| e.score)
    }
}

fn signed_distance(model: &LinearModel, x: &[f64]) -> Result<f64, ExplainError> {
    if x.len() != model.weights.len() {
        return Err(ExplainError::DimensionMismatch {
            expected: model.weights.len(),
            found: x.len(),
        });
    }
    Ok(model.signed_distance(ArrayView1::from(x)))
}

/// Removes each distinct token type from the whole request in turn and
/// measures how far the re-embedded variant sits from the hyperplane.
pub fn token_ablation_scores(
    embedder: &mut Embedder,
    model: &Model,
    doc: &HttpRequestDoc,
) -> Result<AttributionReport, ExplainError> {
    let Model::Linear(linear) = model else {
        return Err(ExplainError::ModelMismatch(model.kind().to_string()));
    };
    let lines: Vec<Vec<TokenId>> = doc
        .lines
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| embedder.tokenize_line(l))
        .collect();
    if lines.is_empty() {
        return Err(ExplainError::EmptyDocument(doc.id.clone()));
    }
    let base_distance = signed_distance(linear, &embedder.embed_token_lines(&lines)?)?;

    let mut types: Vec<(TokenId, usize)> = Vec::new();
    for &id in lines.iter().flatten().filter(|&&id| id >= BYTE_OFFSET) {
        match types.iter_mut().find(|(t, _)| *t == id) {
            Some((_, count)) => *count += 1,
            None => types.push((id, 1)),
        }
    }

    let mut distances = Vec::with_capacity(types.len());
    for &(token, _) in &types {
        let mut variant: Vec<Vec<TokenId>> = lines
            .iter()
            .map(|l| l.iter().copied().filter(|&id| id != token).collect::<Vec<_>>())
            .filter(|l| l.iter().any(|&id| id >= BYTE_OFFSET))
            .collect();
        if variant.is_empty() {
            variant.push(EMPTY_LINE.to_vec());
        }
        distances.push(signed_distance(linear, &embedder.embed_token_lines(&variant)?)?);
    }

    let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate_scale = !(hi > lo);
    let scaled: Vec<f64> = if degenerate_scale {
        vec![0.0; distances.len()]
    } else {
        distances.iter().map(|d| (d - lo) / (hi - lo)).collect()
    };
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;

    let vocab = embedder.vocab();
    let entries = types
        .iter()
        .zip(distances)
        .zip(scaled)
        .map(|((&(token_id, occurrences), distance), scaled)| AttributionEntry {
            token_id,
            token: vocab.token_text(token_id),
            occurrences,
            distance,
            scaled,
            score: if degenerate_scale { 0.0 } else { mean - scaled },
        })
        .collect();
    Ok(AttributionReport {
        doc_id: doc.id.clone(),
        base_distance,
        degenerate_scale,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub token_id: TokenId,
    pub token: String,
    pub total_score: f64,
    /// Number of reports the token appeared in.
    pub documents: usize,
}

/// Sums scores per token over reports with equal weight and keeps the
/// `top_k` highest; ties are ordered by token text.
pub fn aggregate_scores(reports: &[AttributionReport], top_k: usize) -> Result<Vec<AggregateEntry>, ExplainError> {
    if reports.is_empty() {
        return Err(ExplainError::NoReports);
    }
    let mut totals: BTreeMap<TokenId, AggregateEntry> = BTreeMap::new();
    for entry in reports.iter().flat_map(|r| &r.entries) {
        let agg = totals.entry(entry.token_id).or_insert_with(|| AggregateEntry {
            token_id: entry.token_id,
            token: entry.token.clone(),
            total_score: 0.0,
            documents: 0,
        });
        agg.total_score += entry.score;
        agg.documents += 1;
    }
    let mut ranked: Vec<AggregateEntry> = totals.into_values().collect();
    ranked.sort_by(|a, b| {
        b.total_score
            .total_cmp(&a.total_score)
            .then_with(|| a.token.cmp(&b.token))
            .then_with(|| a.token_id.cmp(&b.token_id))
    });
    ranked.truncate(top_k);
    Ok(ranked)
}
