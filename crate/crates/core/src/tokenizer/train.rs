use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{BbpeVocab, TokenId, TokenizerError, BYTE_OFFSET, FIRST_MERGE_ID};
use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    /// Recorded for provenance; training itself is fully deterministic.
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 5000,
            seed: 0,
        }
    }
}

type Pair = (TokenId, TokenId);

/// Heap entry: higher count first, then the lexicographically smaller
/// `(left bytes, right bytes)`.
#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    key: Reverse<(Vec<u8>, Vec<u8>)>,
    pair: Pair,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count.cmp(&other.count).then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Word {
    ids: Vec<TokenId>,
    count: i64,
}

fn pairs_of(ids: &[TokenId]) -> impl Iterator<Item = Pair> + '_ {
    ids.windows(2).map(|w| (w[0], w[1]))
}

fn apply_merge(ids: &[TokenId], pair: Pair, new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Learns merges over the given lines.
///
/// Each step merges the most frequent adjacent pair, ties broken by the
/// lexicographic order of the pair's byte expansions. A pair whose expansion
/// already exists as a token is skipped. Training stops when the vocabulary
/// is full or no pair occurs at least twice.
pub fn train_bbpe<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    config: &TokenizerConfig,
) -> Result<BbpeVocab, TokenizerError> {
    if config.vocab_size <= FIRST_MERGE_ID as usize {
        return Err(TokenizerError::VocabTooSmall(config.vocab_size));
    }
    let mut line_counts: HashMap<&[u8], i64> = HashMap::new();
    for line in lines {
        if !line.is_empty() {
            *line_counts.entry(line.as_bytes()).or_default() += 1;
        }
    }
    if line_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut distinct: Vec<(&[u8], i64)> = line_counts.into_iter().collect();
    distinct.sort_unstable();
    let mut words: Vec<Word> = distinct
        .into_iter()
        .map(|(bytes, count)| Word {
            ids: bytes.iter().map(|&b| BYTE_OFFSET + b as TokenId).collect(),
            count,
        })
        .collect();

    let mut vocab = BbpeVocab::base(config.vocab_size);
    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut where_found: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (w, word) in words.iter().enumerate() {
        for pair in pairs_of(&word.ids) {
            *pair_counts.entry(pair).or_default() += word.count;
            where_found.entry(pair).or_default().insert(w);
        }
    }

    let candidate = |vocab: &BbpeVocab, pair: Pair, count: i64| Candidate {
        count,
        key: Reverse((
            vocab.token_bytes(pair.0).unwrap().to_vec(),
            vocab.token_bytes(pair.1).unwrap().to_vec(),
        )),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| candidate(&vocab, pair, count))
        .collect();
    let mut banned: HashSet<Pair> = HashSet::new();

    while vocab.len() < config.vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count || banned.contains(&top.pair) {
            continue;
        }
        if current < 2 {
            break;
        }
        let (left, right) = top.pair;
        let mut joined = vocab.token_bytes(left).unwrap().to_vec();
        joined.extend_from_slice(vocab.token_bytes(right).unwrap());
        if vocab.token_id(&joined).is_some() {
            banned.insert(top.pair);
            continue;
        }
        let new_id = vocab.push_merge(left, right)?;

        let mut affected: Vec<usize> = where_found.remove(&top.pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<Pair> = HashSet::new();
        for w in affected {
            let word = &mut words[w];
            for pair in pairs_of(&word.ids) {
                *pair_counts.get_mut(&pair).unwrap() -= word.count;
                touched.insert(pair);
            }
            word.ids = apply_merge(&word.ids, top.pair, new_id);
            for pair in pairs_of(&word.ids) {
                *pair_counts.entry(pair).or_default() += word.count;
                where_found.entry(pair).or_default().insert(w);
                touched.insert(pair);
            }
        }
        pair_counts.remove(&top.pair);
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            match pair_counts.get(&pair).copied() {
                Some(count) if count > 0 => heap.push(candidate(&vocab, pair, count)),
                Some(_) => {
                    pair_counts.remove(&pair);
                }
                None => {}
            }
        }
    }
    Ok(vocab)
}

/// Trains over every non-empty line of the given corpora.
pub fn train_bbpe_on_corpora(corpora: &[&Corpus], config: &TokenizerConfig) -> Result<BbpeVocab, TokenizerError> {
    let lines = corpora
        .iter()
        .flat_map(|c| c.docs())
        .flat_map(|d| d.lines.iter().map(String::as_str));
    train_bbpe(lines, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::NUM_SPECIAL;

    fn id(b: u8) -> TokenId {
        BYTE_OFFSET + b as TokenId
    }

    /// Counts adjacent pairs over the current segmentation and returns the
    /// best pair under the documented ordering, without any incremental state.
    fn brute_force_merges(lines: &[&str], num: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut seqs: Vec<Vec<Vec<u8>>> = lines.iter().map(|l| l.bytes().map(|b| vec![b]).collect()).collect();
        let mut known: HashSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut out = Vec::new();
        let mut banned: HashSet<(Vec<u8>, Vec<u8>)> = HashSet::new();
        while out.len() < num {
            let mut counts: HashMap<(Vec<u8>, Vec<u8>), i64> = HashMap::new();
            for s in &seqs {
                for w in s.windows(2) {
                    *counts.entry((w[0].clone(), w[1].clone())).or_default() += 1;
                }
            }
            let best = counts
                .into_iter()
                .filter(|(p, c)| *c >= 2 && !banned.contains(p))
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some((pair, _)) = best else { break };
            let joined = [pair.0.clone(), pair.1.clone()].concat();
            if known.contains(&joined) {
                banned.insert(pair);
                continue;
            }
            known.insert(joined.clone());
            for s in &mut seqs {
                let mut next = Vec::new();
                let mut i = 0;
                while i < s.len() {
                    if i + 1 < s.len() && s[i] == pair.0 && s[i + 1] == pair.1 {
                        next.push(joined.clone());
                        i += 2;
                    } else {
                        next.push(s[i].clone());
                        i += 1;
                    }
                }
                *s = next;
            }
            out.push(pair);
        }
        out
    }

    fn merge_bytes(vocab: &BbpeVocab) -> Vec<(Vec<u8>, Vec<u8>)> {
        vocab
            .merges()
            .iter()
            .map(|&(l, r)| (vocab.token_bytes(l).unwrap().to_vec(), vocab.token_bytes(r).unwrap().to_vec()))
            .collect()
    }

    #[test]
    fn first_merge_is_aa() {
        let config = TokenizerConfig {
            vocab_size: 256 + NUM_SPECIAL + 2,
            seed: 0,
        };
        let vocab = train_bbpe(["aaab aaab aaab"], &config).unwrap();
        // (a,a) occurs 6 times, (a,b) 3, (b,' ') and (' ',a) twice each.
        assert_eq!(vocab.merges()[0], (id(b'a'), id(b'a')));
        // After it, (a,b) and (aa,a) tie at 3; "a" sorts before "aa".
        assert_eq!(vocab.merges()[1], (id(b'a'), id(b'b')));
        assert_eq!(vocab.len(), 256 + NUM_SPECIAL + 2);
    }

    #[test]
    fn single_byte_corpus_has_no_merges() {
        let vocab = train_bbpe(["x"], &TokenizerConfig::default()).unwrap();
        assert!(vocab.merges().is_empty());
        assert_eq!(vocab.len(), 256 + NUM_SPECIAL);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            train_bbpe(["", ""], &TokenizerConfig::default()),
            Err(TokenizerError::EmptyCorpus)
        ));
        let tiny = TokenizerConfig { vocab_size: 100, seed: 0 };
        assert!(matches!(train_bbpe(["ab"], &tiny), Err(TokenizerError::VocabTooSmall(100))));
    }

    #[test]
    fn matches_brute_force_and_is_deterministic() {
        let lines = [
            "GET /tienda1/index.jsp HTTP/1.1",
            "GET /tienda1/publico/anadir.jsp?id=2&nombre=Queso HTTP/1.1",
            "Host: localhost:8080",
            "Host: localhost:8080",
            "aaaaaaa bbbb aaaa",
            "abababab",
        ];
        let config = TokenizerConfig {
            vocab_size: FIRST_MERGE_ID as usize + 40,
            seed: 0,
        };
        let vocab = train_bbpe(lines, &config).unwrap();
        assert_eq!(merge_bytes(&vocab), brute_force_merges(&lines, 40));
        assert_eq!(vocab, train_bbpe(lines, &config).unwrap());
    }
}
