//! HTTP request corpora: parsing, normalization profiles, JSONL interchange,
//! stratified folds and a synthetic generator.

mod folds;
mod io;
mod normalize;
mod parse;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use folds::{split_stratified_kfold, FoldAssignment};
pub use io::{load_corpus, save_corpus, CorpusFormat};
pub use normalize::{
    ids2018_sanitize, normalize_request, passes_content_type_filter, Ids2018Options,
    NormalizationProfile, ProfileName, DVWA_PREFIXES,
};
pub use parse::{parse_http_request, ParseMode};
pub use synth::{generate_synthetic_corpus, AnomalyKind, SynthSpec, PAYLOAD_TOKENS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty input")]
    EmptyInput,
    #[error("malformed request line: {0:?}")]
    MalformedRequestLine(String),
    #[error("unknown normalization profile: {0}")]
    UnknownProfile(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("class {label} has {count} members, fewer than k = {k}")]
    ClassTooSmall { label: Label, count: usize, k: usize },
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
            Label::Unlabeled => "unlabeled",
        }
    }

    /// `Some(true)` for anomalies, `Some(false)` for normal traffic.
    pub fn is_anomaly(self) -> Option<bool> {
        match self {
            Label::Normal => Some(false),
            Label::Anomaly => Some(true),
            Label::Unlabeled => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomaly" => Ok(Label::Anomaly),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Inference,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "inference" => Ok(Split::Inference),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One HTTP request as ordered text lines.
///
/// Line 0 is the request line for full-request parses. Empty strings mark the
/// header/body separator and are kept so the layout survives serialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequestDoc {
    pub id: String,
    pub label: Label,
    pub lines: Vec<String>,
    pub source: String,
}

impl HttpRequestDoc {
    pub fn new(id: impl Into<String>, label: Label, lines: Vec<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label,
            lines,
            source: source.into(),
        }
    }

    /// Index of the first empty line, which separates headers from the body.
    pub fn body_separator(&self) -> Option<usize> {
        self.lines.iter().position(|l| l.is_empty())
    }

    /// Header lines (everything between the request line and the separator).
    pub fn header_range(&self) -> std::ops::Range<usize> {
        let end = self.body_separator().unwrap_or(self.lines.len());
        1.min(end)..end
    }

    pub fn header_value(&self, name: &str) -> Option<&str> {
        self.lines[self.header_range()].iter().find_map(|line| {
            let (key, value) = line.split_once(':')?;
            key.trim().eq_ignore_ascii_case(name).then(|| value.trim())
        })
    }
}

/// A validated set of documents belonging to one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<HttpRequestDoc>,
    split: Split,
}

impl Corpus {
    /// Builds a corpus, enforcing unique ids and normal-only training data.
    pub fn new(docs: Vec<HttpRequestDoc>, split: Split) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(docs.len());
        for doc in &docs {
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::Invalid(format!("duplicate id {:?}", doc.id)));
            }
            if doc.lines.is_empty() {
                return Err(CorpusError::Invalid(format!("doc {:?} has no lines", doc.id)));
            }
            if split == Split::Train && doc.label != Label::Normal {
                return Err(CorpusError::Invalid(format!(
                    "train split holds {} doc {:?}; only normal traffic is allowed",
                    doc.label, doc.id
                )));
            }
        }
        Ok(Self { docs, split })
    }

    pub fn empty(split: Split) -> Self {
        Self { docs: Vec::new(), split }
    }

    pub fn docs(&self) -> &[HttpRequestDoc] {
        &self.docs
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.docs.iter().map(|d| d.label).collect()
    }

    pub fn get(&self, id: &str) -> Option<&HttpRequestDoc> {
        self.docs.iter().find(|d| d.id == id)
    }

    pub fn into_docs(self) -> Vec<HttpRequestDoc> {
        self.docs
    }
}
