//! Byte-level BPE.
//!
//! The base alphabet is the 256 byte values, so every input encodes without
//! unknown tokens. Merges never cross line boundaries (each line is encoded on
//! its own) but may cross whitespace: there is no pre-tokenization.

mod encode;
mod io;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_vocab, save_vocab};
pub(crate) use io::vocab_to_string;
pub use train::{train_bbpe, train_bbpe_on_corpora, TokenizerConfig};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const MASK: TokenId = 3;
pub const NUM_SPECIAL: usize = 4;
/// Id of byte value 0; byte `b` is `BYTE_OFFSET + b`.
pub const BYTE_OFFSET: TokenId = NUM_SPECIAL as TokenId;
/// Id of the first merged token.
pub const FIRST_MERGE_ID: TokenId = BYTE_OFFSET + 256;

pub const SPECIAL_NAMES: [&str; NUM_SPECIAL] = ["<pad>", "<s>", "</s>", "<mask>"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("corpus holds no bytes to train on")]
    EmptyCorpus,
    #[error("vocab_size {0} leaves no room for merges (minimum {min})", min = FIRST_MERGE_ID as usize + 1)]
    VocabTooSmall(usize),
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocab file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub mask: TokenId,
}

pub const SPECIALS: SpecialIds = SpecialIds {
    pad: PAD,
    bos: BOS,
    eos: EOS,
    mask: MASK,
};

/// Trained merge table plus the id/byte-string bijection.
#[derive(Debug, Clone)]
pub struct BbpeVocab {
    vocab_size: usize,
    merges: Vec<(TokenId, TokenId)>,
    /// Byte expansion per id; empty for specials.
    tokens: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, TokenId>,
    merge_ranks: HashMap<(TokenId, TokenId), u32>,
}

impl PartialEq for BbpeVocab {
    fn eq(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size && self.merges == other.merges
    }
}

impl BbpeVocab {
    /// Rebuilds a vocab from an ordered merge list.
    pub fn from_merges(vocab_size: usize, merges: Vec<(TokenId, TokenId)>) -> Result<Self, TokenizerError> {
        if vocab_size < FIRST_MERGE_ID as usize + merges.len() {
            return Err(TokenizerError::Format(format!(
                "{} merges exceed vocab_size {vocab_size}",
                merges.len()
            )));
        }
        let mut vocab = Self::base(vocab_size);
        for &(left, right) in &merges {
            vocab.push_merge(left, right)?;
        }
        Ok(vocab)
    }

    pub(crate) fn base(vocab_size: usize) -> Self {
        let mut tokens: Vec<Vec<u8>> = vec![Vec::new(); NUM_SPECIAL];
        let mut token_to_id = HashMap::with_capacity(vocab_size);
        for b in 0..=255u8 {
            token_to_id.insert(vec![b], BYTE_OFFSET + b as TokenId);
            tokens.push(vec![b]);
        }
        Self {
            vocab_size,
            merges: Vec::new(),
            tokens,
            token_to_id,
            merge_ranks: HashMap::new(),
        }
    }

    pub(crate) fn push_merge(&mut self, left: TokenId, right: TokenId) -> Result<TokenId, TokenizerError> {
        let valid = |id: TokenId| id >= BYTE_OFFSET && (id as usize) < self.tokens.len();
        if !valid(left) || !valid(right) {
            return Err(TokenizerError::Format(format!("merge ({left}, {right}) references unknown tokens")));
        }
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        if self.token_to_id.contains_key(&bytes) {
            return Err(TokenizerError::Format(format!(
                "merge ({left}, {right}) duplicates an existing token"
            )));
        }
        let id = self.tokens.len() as TokenId;
        self.merge_ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        self.token_to_id.insert(bytes.clone(), id);
        self.tokens.push(bytes);
        Ok(id)
    }

    /// Configured upper bound on the vocabulary size.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of ids in use: specials + bytes + merges.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn specials(&self) -> SpecialIds {
        SPECIALS
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        if Self::is_special(id) {
            return None;
        }
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<TokenId> {
        self.token_to_id.get(bytes).copied()
    }

    /// Printable form of a token: specials by name, others as lossy UTF-8.
    pub fn token_text(&self, id: TokenId) -> String {
        if Self::is_special(id) {
            return SPECIAL_NAMES[id as usize].to_owned();
        }
        match self.tokens.get(id as usize) {
            Some(bytes) => String::from_utf8_lossy(bytes).into_owned(),
            None => format!("<unk:{id}>"),
        }
    }

    /// The same vocab keeping only the first `num_merges` merges.
    pub fn truncated(&self, num_merges: usize) -> Self {
        let merges = self.merges[..num_merges.min(self.merges.len())].to_vec();
        Self::from_merges(self.vocab_size, merges).expect("prefix of a valid merge list is valid")
    }

    pub(crate) fn merge_rank(&self, left: TokenId, right: TokenId) -> Option<u32> {
        self.merge_ranks.get(&(left, right)).copied()
    }
}
