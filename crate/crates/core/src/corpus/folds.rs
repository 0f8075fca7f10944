use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Label};
use crate::rng;

/// Fold index per sample, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Stratified k-fold split: each class is shuffled with a seeded stream and
/// dealt round-robin, so per-fold class counts differ by at most one.
pub fn split_stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<FoldAssignment, CorpusError> {
    assert!(k >= 2, "k-fold needs k >= 2");
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    for (&label, members) in &by_class {
        if members.len() < k {
            return Err(CorpusError::ClassTooSmall {
                label,
                count: members.len(),
                k,
            });
        }
    }

    let mut assignment = vec![0usize; labels.len()];
    let mut rng = rng::seeded(seed);
    let mut offset = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (j + offset) % k;
        }
        // Rotate the starting fold so remainders spread across folds.
        offset = (offset + members.len()) % k;
    }
    Ok(FoldAssignment { k, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(f: &FoldAssignment, labels: &[Label], label: Label) -> Vec<usize> {
        let mut c = vec![0; f.k];
        for (i, &l) in labels.iter().enumerate() {
            if l == label {
                c[f.assignment[i]] += 1;
            }
        }
        c
    }

    #[test]
    fn exact_division() {
        let labels: Vec<Label> = (0..20).map(|i| if i < 10 { Label::Normal } else { Label::Anomaly }).collect();
        let f = split_stratified_kfold(&labels, 5, 1).unwrap();
        assert_eq!(counts(&f, &labels, Label::Normal), vec![2; 5]);
        assert_eq!(counts(&f, &labels, Label::Anomaly), vec![2; 5]);
    }

    #[test]
    fn table_sized_split() {
        let mut labels = vec![Label::Normal; 36_000];
        labels.extend(std::iter::repeat_n(Label::Anomaly, 25_065));
        let f = split_stratified_kfold(&labels, 5, 42).unwrap();
        assert_eq!(counts(&f, &labels, Label::Normal), vec![7200; 5]);
        assert_eq!(counts(&f, &labels, Label::Anomaly), vec![5013; 5]);
    }

    #[test]
    fn class_too_small() {
        let mut labels = vec![Label::Normal; 10];
        labels.extend([Label::Anomaly; 3]);
        assert!(matches!(
            split_stratified_kfold(&labels, 5, 0),
            Err(CorpusError::ClassTooSmall { count: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(n_norm in 5usize..80, n_anom in 5usize..80, k in 2usize..6, seed: u64) {
            let mut labels = vec![Label::Normal; n_norm];
            labels.extend(vec![Label::Anomaly; n_anom]);
            let f = split_stratified_kfold(&labels, k, seed).unwrap();
            prop_assert_eq!(f.assignment.len(), labels.len());
            let total: usize = (0..k).map(|fold| f.test_indices(fold).len()).sum();
            prop_assert_eq!(total, labels.len());
            for label in [Label::Normal, Label::Anomaly] {
                let c = counts(&f, &labels, label);
                let (lo, hi) = (c.iter().min().unwrap(), c.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
            prop_assert_eq!(&f, &split_stratified_kfold(&labels, k, seed).unwrap());
        }
    }
}
