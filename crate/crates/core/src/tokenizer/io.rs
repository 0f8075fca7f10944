//! Vocab file: one JSON manifest line, then one `left<TAB>right` line per
//! merge in rank order. Token bytes are written with the GPT-2 byte-to-unicode
//! table so every byte has a printable, whitespace-free character.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{BbpeVocab, SpecialIds, TokenId, TokenizerError, SPECIALS};

const FORMAT: &str = "reqvec-bbpe/1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    vocab_size: usize,
    num_merges: usize,
    specials: SpecialIds,
    byte_offset: TokenId,
}

fn byte_to_char() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = ['\0'; 256];
        let mut extra = 0u32;
        for b in 0..=255u8 {
            let printable = (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
            table[b as usize] = if printable {
                char::from(b)
            } else {
                extra += 1;
                char::from_u32(255 + extra).unwrap()
            };
        }
        table
    })
}

fn char_to_byte() -> &'static HashMap<char, u8> {
    static TABLE: OnceLock<HashMap<char, u8>> = OnceLock::new();
    TABLE.get_or_init(|| byte_to_char().iter().enumerate().map(|(b, &c)| (c, b as u8)).collect())
}

fn encode_token(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| byte_to_char()[b as usize]).collect()
}

fn decode_token(text: &str) -> Option<Vec<u8>> {
    text.chars().map(|c| char_to_byte().get(&c).copied()).collect()
}

pub fn save_vocab(vocab: &BbpeVocab, path: &Path) -> Result<(), TokenizerError> {
    fs::write(path, vocab_to_string(vocab)).map_err(|source| TokenizerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn vocab_to_string(vocab: &BbpeVocab) -> String {
    let manifest = Manifest {
        format: FORMAT.to_owned(),
        vocab_size: vocab.vocab_size(),
        num_merges: vocab.merges().len(),
        specials: SPECIALS,
        byte_offset: super::BYTE_OFFSET,
    };
    let mut out = serde_json::to_string(&manifest).expect("manifest serializes");
    out.push('\n');
    for &(left, right) in vocab.merges() {
        out.push_str(&encode_token(vocab.token_bytes(left).unwrap()));
        out.push('\t');
        out.push_str(&encode_token(vocab.token_bytes(right).unwrap()));
        out.push('\n');
    }
    out
}

pub fn load_vocab(path: &Path) -> Result<BbpeVocab, TokenizerError> {
    let text = fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::InvalidData => TokenizerError::Format("vocab file is not UTF-8".into()),
        _ => TokenizerError::Io {
            path: path.display().to_string(),
            source,
        },
    })?;
    vocab_from_str(&text)
}

pub(crate) fn vocab_from_str(text: &str) -> Result<BbpeVocab, TokenizerError> {
    let format = |m: String| TokenizerError::Format(m);
    if !text.ends_with('\n') {
        return Err(format("file does not end with a newline (truncated?)".into()));
    }
    let mut lines = text[..text.len() - 1].split('\n');
    let header = lines.next().ok_or_else(|| format("missing manifest".into()))?;
    let manifest: Manifest = serde_json::from_str(header).map_err(|e| format(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(format(format!("unsupported format {:?}", manifest.format)));
    }
    if manifest.specials != SPECIALS || manifest.byte_offset != super::BYTE_OFFSET {
        return Err(format("special-token layout does not match this build".into()));
    }

    let mut vocab = BbpeVocab::base(manifest.vocab_size);
    let mut count = 0;
    for (n, line) in lines.enumerate() {
        if manifest.num_merges == 0 && line.is_empty() {
            continue;
        }
        let (left, right) = line
            .split_once('\t')
            .ok_or_else(|| format(format!("merge line {} has no tab", n + 1)))?;
        let lookup = |s: &str| {
            decode_token(s)
                .and_then(|bytes| vocab.token_id(&bytes))
                .ok_or_else(|| format(format!("merge line {} references unknown token {s:?}", n + 1)))
        };
        let (l, r) = (lookup(left)?, lookup(right)?);
        vocab.push_merge(l, r)?;
        count += 1;
    }
    if count != manifest.num_merges {
        return Err(format(format!("expected {} merges, found {count}", manifest.num_merges)));
    }
    if vocab.len() > manifest.vocab_size {
        return Err(format("merge count exceeds vocab_size".into()));
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{train_bbpe, TokenizerConfig};

    #[test]
    fn byte_table_is_bijective_and_printable() {
        assert_eq!(char_to_byte().len(), 256);
        assert!(byte_to_char().iter().all(|c| !c.is_whitespace() && !c.is_control()));
    }

    #[test]
    fn round_trip_preserves_encoding() {
        let lines = ["Host: localhost:8080", "Cookie: JSESSIONID=ABCDEF\t\u{1}", "Host: localhost:8080"];
        let vocab = train_bbpe(lines, &TokenizerConfig { vocab_size: 300, seed: 0 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.bpe");
        save_vocab(&vocab, &path).unwrap();
        let loaded = load_vocab(&path).unwrap();
        assert_eq!(loaded, vocab);
        for probe in lines.iter().chain(&["Host: other", "", "\u{7f}\u{0}"]) {
            assert_eq!(loaded.encode(probe, true), vocab.encode(probe, true));
        }
        // Saving again is byte-identical.
        let again = dir.path().join("again.bpe");
        save_vocab(&loaded, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let lines = ["abcabcabc abcabc", "abcabc"];
        let vocab = train_bbpe(lines, &TokenizerConfig { vocab_size: 300, seed: 0 }).unwrap();
        let text = vocab_to_string(&vocab);
        for cut in [text.len() - 1, text.len() - 3, text.len() / 2, 10] {
            if !text.is_char_boundary(cut) {
                continue;
            }
            assert!(matches!(vocab_from_str(&text[..cut]), Err(TokenizerError::Format(_))), "cut {cut}");
        }
        // Dropping a whole trailing merge line still trips the count check.
        let last_line = text[..text.len() - 1].rfind('\n').unwrap();
        assert!(matches!(vocab_from_str(&text[..last_line + 1]), Err(TokenizerError::Format(_))));
    }

    #[test]
    fn zero_merges_loadable() {
        let vocab = BbpeVocab::base(5000);
        let loaded = vocab_from_str(&vocab_to_string(&vocab)).unwrap();
        assert_eq!(loaded, vocab);
        assert!(loaded.merges().is_empty());
    }
}
