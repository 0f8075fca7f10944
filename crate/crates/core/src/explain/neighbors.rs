use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::embedder::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub doc_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query_id: String,
    /// Whether the query itself occupies rank 0.
    pub include_self: bool,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborList {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "doc_id", "distance"]).unwrap();
        for (rank, n) in self.neighbors.iter().enumerate() {
            w.write_record([rank.to_string(), n.doc_id.clone(), n.distance.to_string()]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

pub(crate) fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// The `n` rows closest to `query_id` by exact Euclidean distance, ties
/// broken by doc id. The query is never among the `n`; with `include_self`
/// it is prepended at distance 0.
pub fn nearest_neighbors(
    matrix: &EmbeddingMatrix,
    query_id: &str,
    n: usize,
    include_self: bool,
) -> Result<NeighborList, ExplainError> {
    let q = matrix
        .position(query_id)
        .ok_or_else(|| ExplainError::UnknownId(query_id.to_owned()))?;
    let available = matrix.len() - 1;
    if n > available {
        return Err(ExplainError::NTooLarge { n, available });
    }
    let query = &matrix.rows[q].values;
    let mut candidates: Vec<Neighbor> = matrix
        .rows
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != q)
        .map(|(_, r)| Neighbor {
            doc_id: r.doc_id.clone(),
            distance: euclidean(query, &r.values),
        })
        .collect();
    candidates.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.doc_id.cmp(&b.doc_id)));
    candidates.truncate(n);
    if include_self {
        candidates.insert(
            0,
            Neighbor {
                doc_id: query_id.to_owned(),
                distance: 0.0,
            },
        );
    }
    Ok(NeighborList {
        query_id: query_id.to_owned(),
        include_self,
        neighbors: candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::embedder::EmbeddingVector;

    fn matrix(rows: &[(&str, [f32; 2])]) -> EmbeddingMatrix {
        let rows = rows
            .iter()
            .map(|(id, v)| EmbeddingVector {
                doc_id: id.to_string(),
                label: Label::Normal,
                values: v.to_vec(),
            })
            .collect();
        EmbeddingMatrix::new(rows, 2, "fp".into()).unwrap()
    }

    #[test]
    fn ordering_ties_and_self() {
        let m = matrix(&[("q", [0.0, 0.0]), ("b", [3.0, 4.0]), ("a", [0.0, 5.0]), ("dup", [0.0, 0.0]), ("c", [1.0, 0.0])]);
        let list = nearest_neighbors(&m, "q", 4, true).unwrap();
        let ids: Vec<&str> = list.neighbors.iter().map(|n| n.doc_id.as_str()).collect();
        assert_eq!(ids, ["q", "dup", "c", "a", "b"]);
        assert_eq!(list.neighbors[1].distance, 0.0);
        assert_eq!(list.neighbors[3].distance, 5.0);
        let without = nearest_neighbors(&m, "q", 2, false).unwrap();
        assert_eq!(without.neighbors.len(), 2);
        assert_eq!(without.neighbors[0].doc_id, "dup");
        assert!(matches!(nearest_neighbors(&m, "q", 5, false), Err(ExplainError::NTooLarge { n: 5, available: 4 })));
        assert!(matches!(nearest_neighbors(&m, "zz", 1, false), Err(ExplainError::UnknownId(_))));
        assert!(without.to_csv().starts_with("rank,doc_id,distance\n0,dup,0\n"));
    }
}
