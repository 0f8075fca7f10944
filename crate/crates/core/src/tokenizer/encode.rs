use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{BbpeVocab, TokenId, TokenizerError, BOS, BYTE_OFFSET, EOS};

#[derive(Clone, Copy)]
struct Node {
    id: TokenId,
    prev: Option<usize>,
    next: Option<usize>,
    alive: bool,
}

impl BbpeVocab {
    pub fn encode(&self, text: &str, add_bos_eos: bool) -> Vec<TokenId> {
        self.encode_bytes(text.as_bytes(), add_bos_eos)
    }

    /// Applies merges lowest rank first; among equal ranks the leftmost
    /// occurrence wins.
    pub fn encode_bytes(&self, bytes: &[u8], add_bos_eos: bool) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(bytes.len() + 2);
        if add_bos_eos {
            out.push(BOS);
        }
        out.extend(self.merge_sequence(bytes));
        if add_bos_eos {
            out.push(EOS);
        }
        out
    }

    fn merge_sequence(&self, bytes: &[u8]) -> Vec<TokenId> {
        let n = bytes.len();
        if n < 2 || self.merges().is_empty() {
            return bytes.iter().map(|&b| BYTE_OFFSET + b as TokenId).collect();
        }
        let mut nodes: Vec<Node> = bytes
            .iter()
            .enumerate()
            .map(|(i, &b)| Node {
                id: BYTE_OFFSET + b as TokenId,
                prev: i.checked_sub(1),
                next: (i + 1 < n).then_some(i + 1),
                alive: true,
            })
            .collect();

        // (rank, left node, left id, right id); stale entries are skipped on pop.
        let mut heap: BinaryHeap<Reverse<(u32, usize, TokenId, TokenId)>> = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(rank) = self.merge_rank(nodes[i].id, nodes[i + 1].id) {
                heap.push(Reverse((rank, i, nodes[i].id, nodes[i + 1].id)));
            }
        }

        while let Some(Reverse((rank, left, left_id, right_id))) = heap.pop() {
            let node = nodes[left];
            let Some(right) = node.next else { continue };
            if !node.alive || node.id != left_id || nodes[right].id != right_id {
                continue;
            }
            let merged = super::FIRST_MERGE_ID + rank;
            let after = nodes[right].next;
            nodes[left].id = merged;
            nodes[left].next = after;
            nodes[right].alive = false;
            if let Some(a) = after {
                nodes[a].prev = Some(left);
                if let Some(r) = self.merge_rank(merged, nodes[a].id) {
                    heap.push(Reverse((r, left, merged, nodes[a].id)));
                }
            }
            if let Some(p) = nodes[left].prev {
                if let Some(r) = self.merge_rank(nodes[p].id, merged) {
                    heap.push(Reverse((r, p, nodes[p].id, merged)));
                }
            }
        }

        let mut out = Vec::new();
        let mut cursor = Some(0);
        while let Some(i) = cursor {
            out.push(nodes[i].id);
            cursor = nodes[i].next;
        }
        out
    }

    /// Concatenated bytes of `ids`, specials dropped.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            if Self::is_special(id) {
                continue;
            }
            out.extend_from_slice(self.token_bytes(id).ok_or(TokenizerError::UnknownId(id))?);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }
}
