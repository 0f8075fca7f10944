//! Fixed-length request vectors from a trained encoder.
//!
//! A token's vector is its hidden state in each of the last four encoder
//! layers, concatenated. Tokens are pooled into a line vector and line vectors
//! are averaged into the request vector.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::binfile;
use crate::corpus::{Corpus, HttpRequestDoc, Label};
use crate::encoder::{Encoder, EncoderError, EncoderParams};
use crate::tokenizer::{BbpeVocab, TokenId, BOS, BYTE_OFFSET, EOS};

pub const CONCAT_LAYERS: usize = 4;
/// Line vectors kept in the cache, measured in `f64` values.
const CACHE_BUDGET: usize = 32 << 20;

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("encoder has {layers} layers, {CONCAT_LAYERS} required")]
    TooFewLayers { layers: usize },
    #[error("document {0} has no non-empty line")]
    EmptyDocument(String),
    #[error("document {id}: {source}")]
    InDocument {
        id: String,
        #[source]
        source: Box<EmbedderError>,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("embeddings were produced by model {found}, expected {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding file: {0}")]
    Format(String),
}

impl From<binfile::BinFileError> for EmbedderError {
    fn from(e: binfile::BinFileError) -> Self {
        match e {
            binfile::BinFileError::Io { path, source } => EmbedderError::Io { path, source },
            other => EmbedderError::Format(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over the non-special tokens of the line.
    #[default]
    MeanTokens,
    /// The first non-special token.
    FirstToken,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::MeanTokens => "mean_tokens",
            Pooling::FirstToken => "first_token",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_tokens" | "mean" => Ok(Pooling::MeanTokens),
            "first_token" | "first" => Ok(Pooling::FirstToken),
            other => Err(format!("unknown pooling {other:?} (expected mean_tokens or first_token)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub doc_id: String,
    pub label: Label,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Vec<EmbeddingVector>,
    pub dim: usize,
    pub fingerprint: String,
}

impl EmbeddingMatrix {
    pub fn new(rows: Vec<EmbeddingVector>, dim: usize, fingerprint: String) -> Result<Self, EmbedderError> {
        if let Some(bad) = rows.iter().find(|r| r.values.len() != dim) {
            return Err(EmbedderError::Format(format!(
                "row {} has length {}, expected {dim}",
                bad.doc_id,
                bad.values.len()
            )));
        }
        Ok(Self { rows, dim, fingerprint })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.doc_id.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.doc_id == doc_id)
    }

    /// Rows as an `n × dim` matrix of `f64`.
    pub fn to_array(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), self.dim));
        for (mut dst, row) in out.rows_mut().into_iter().zip(&self.rows) {
            dst.iter_mut().zip(&row.values).for_each(|(d, &v)| *d = v as f64);
        }
        out
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            dim: self.dim,
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn check_fingerprint(&self, expected: &str) -> Result<(), EmbedderError> {
        if self.fingerprint == expected {
            Ok(())
        } else {
            Err(EmbedderError::FingerprintMismatch {
                expected: expected.to_owned(),
                found: self.fingerprint.clone(),
            })
        }
    }
}

/// Identifies a (vocab, encoder) pair: hex SHA-256 over the serialized vocab
/// and the raw parameter payload.
pub fn model_fingerprint(vocab: &BbpeVocab, params: &EncoderParams) -> String {
    let mut hasher = Sha256::new();
    hasher.update(crate::tokenizer::vocab_to_string(vocab).as_bytes());
    hasher.update(serde_json::to_vec(&params.config).expect("config serializes"));
    hasher.update(params.payload_bytes());
    hex::encode(hasher.finalize())
}

/// A frozen encoder and vocabulary with a cache of line vectors.
pub struct Embedder {
    encoder: Encoder,
    vocab: BbpeVocab,
    pooling: Pooling,
    layers_used: usize,
    fingerprint: String,
    cache: HashMap<Vec<TokenId>, Vec<f64>>,
}

impl Embedder {
    /// With `strict`, encoders with fewer than four layers are rejected;
    /// otherwise all their layers are concatenated.
    pub fn new(
        params: &EncoderParams,
        vocab: &BbpeVocab,
        pooling: Pooling,
        strict: bool,
    ) -> Result<Self, EmbedderError> {
        let layers = params.config.num_layers;
        if strict && layers < CONCAT_LAYERS {
            return Err(EmbedderError::TooFewLayers { layers });
        }
        if vocab.vocab_size() > params.config.vocab_size {
            return Err(EncoderError::ShapeMismatch(format!(
                "vocab of {} ids does not fit an encoder of {}",
                vocab.vocab_size(),
                params.config.vocab_size
            ))
            .into());
        }
        Ok(Self {
            encoder: Encoder::new(params),
            vocab: vocab.clone(),
            pooling,
            layers_used: layers.min(CONCAT_LAYERS),
            fingerprint: model_fingerprint(vocab, params),
            cache: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.layers_used * self.encoder.config().hidden_size
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn vocab(&self) -> &BbpeVocab {
        &self.vocab
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    /// `[BOS] line [EOS]`, truncated to the encoder's length with EOS kept.
    pub fn tokenize_line(&self, line: &str) -> Vec<TokenId> {
        let mut ids = self.vocab.encode(line, true);
        let max = self.encoder.config().max_seq_len;
        if ids.len() > max {
            ids.truncate(max - 1);
            ids.push(EOS);
        }
        ids
    }

    pub fn embed_line(&mut self, line: &str) -> Result<Vec<f64>, EmbedderError> {
        let ids = self.tokenize_line(line);
        self.embed_ids(&ids)
    }

    /// Line vector of an already tokenized sequence (including BOS/EOS).
    pub fn embed_ids(&mut self, ids: &[TokenId]) -> Result<Vec<f64>, EmbedderError> {
        if let Some(v) = self.cache.get(ids) {
            return Ok(v.clone());
        }
        let hidden = self.encoder.hidden_states(ids)?;
        let h = self.encoder.config().hidden_size;
        let top = &hidden[hidden.len() - self.layers_used..];
        let content: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] >= BYTE_OFFSET).collect();
        let positions: Vec<usize> = match (self.pooling, content.is_empty()) {
            (_, true) => (0..ids.len()).collect(),
            (Pooling::MeanTokens, false) => content,
            (Pooling::FirstToken, false) => vec![content[0]],
        };
        let mut out = vec![0.0; self.dim()];
        for (l, layer) in top.iter().enumerate() {
            let dst = &mut out[l * h..(l + 1) * h];
            for &p in &positions {
                dst.iter_mut().zip(layer.row(p)).for_each(|(d, v)| *d += v);
            }
        }
        let n = positions.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        if self.cache.len() * self.dim() < CACHE_BUDGET {
            self.cache.insert(ids.to_vec(), out.clone());
        }
        Ok(out)
    }

    /// Mean of the line vectors of pre-tokenized lines.
    pub fn embed_token_lines(&mut self, lines: &[Vec<TokenId>]) -> Result<Vec<f64>, EmbedderError> {
        let mut sum = Array1::<f64>::zeros(self.dim());
        for ids in lines {
            sum += &Array1::from(self.embed_ids(ids)?);
        }
        Ok((sum / lines.len() as f64).to_vec())
    }

    /// Mean of the line vectors of every non-empty line.
    pub fn embed_request_f64(&mut self, doc: &HttpRequestDoc) -> Result<Vec<f64>, EmbedderError> {
        let lines: Vec<Vec<TokenId>> = doc
            .lines
            .iter()
            .filter(|l| !l.is_empty())
            .map(|l| self.tokenize_line(l))
            .collect();
        if lines.is_empty() {
            return Err(EmbedderError::EmptyDocument(doc.id.clone()));
        }
        self.embed_token_lines(&lines)
    }

    pub fn embed_request(&mut self, doc: &HttpRequestDoc) -> Result<EmbeddingVector, EmbedderError> {
        Ok(EmbeddingVector {
            doc_id: doc.id.clone(),
            label: doc.label,
            values: self.embed_request_f64(doc)?.into_iter().map(|v| v as f32).collect(),
        })
    }

    /// One row per document, in corpus order.
    pub fn embed_corpus(&mut self, corpus: &Corpus) -> Result<EmbeddingMatrix, EmbedderError> {
        let rows = corpus
            .docs()
            .iter()
            .map(|doc| {
                self.embed_request(doc).map_err(|e| EmbedderError::InDocument {
                    id: doc.id.clone(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EmbeddingMatrix {
            rows,
            dim: self.dim(),
            fingerprint: self.fingerprint.clone(),
        })
    }
}

/// `[BOS, EOS]`: the sequence of a line with no content.
pub const EMPTY_LINE: [TokenId; 2] = [BOS, EOS];

const FORMAT: &str = "reqvec-embeddings/1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dim: usize,
    count: usize,
    fingerprint: String,
    ids: Vec<String>,
    labels: Vec<Label>,
}

pub fn save_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<(), EmbedderError> {
    let manifest = Manifest {
        format: FORMAT.to_owned(),
        dim: matrix.dim,
        count: matrix.rows.len(),
        fingerprint: matrix.fingerprint.clone(),
        ids: matrix.rows.iter().map(|r| r.doc_id.clone()).collect(),
        labels: matrix.labels(),
    };
    let payload: Vec<f32> = matrix.rows.iter().flat_map(|r| r.values.iter().copied()).collect();
    binfile::write(path, &manifest, &payload)?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, EmbedderError> {
    let (manifest, payload) = binfile::read::<Manifest>(path, |m| m.dim * m.count)?;
    if manifest.format != FORMAT {
        return Err(EmbedderError::Format(format!("unsupported format {:?}", manifest.format)));
    }
    if manifest.ids.len() != manifest.count || manifest.labels.len() != manifest.count {
        return Err(EmbedderError::Format("id or label list disagrees with count".into()));
    }
    let rows = manifest
        .ids
        .into_iter()
        .zip(manifest.labels)
        .enumerate()
        .map(|(i, (doc_id, label))| EmbeddingVector {
            doc_id,
            label,
            values: payload[i * manifest.dim..(i + 1) * manifest.dim].to_vec(),
        })
        .collect();
    Ok(EmbeddingMatrix {
        rows,
        dim: manifest.dim,
        fingerprint: manifest.fingerprint,
    })
}

/// Loads and rejects matrices produced by a different model.
pub fn load_embeddings_checked(path: &Path, fingerprint: &str) -> Result<EmbeddingMatrix, EmbedderError> {
    let matrix = load_embeddings(path)?;
    matrix.check_fingerprint(fingerprint)?;
    Ok(matrix)
}
