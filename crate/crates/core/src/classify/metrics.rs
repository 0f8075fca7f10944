use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{fold_split, train, ClassifierConfig, ClassifyError};
use crate::corpus::FoldAssignment;

/// Threshold at which F1 and MCC are computed: a positive score is an anomaly.
pub const DECISION_THRESHOLD: f64 = 0.0;

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            Repr::Named(if *v > 0.0 { "inf" } else { "-inf" }.into()).serialize(s)
        } else {
            Repr::Finite(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Named(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Named(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Named(s) => Err(serde::de::Error::custom(format!("bad threshold {s:?}"))),
        }
    }
}

/// One operating point: predict anomaly when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
}

/// ROC over the sorted unique scores, preceded by the `+inf` point (0, 0).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Vec<RocPoint> {
    let pos = labels.iter().filter(|&&l| l).count().max(1) as f64;
    let neg = labels.iter().filter(|&&l| !l).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
            threshold,
        });
    }
    points
}

/// Smallest false-positive rate among points whose TPR reaches `target`.
pub fn fpr_at_tpr(roc: &[RocPoint], target: f64) -> f64 {
    roc.iter()
        .filter(|p| p.tpr >= target)
        .map(|p| p.fpr)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

pub fn f1_score(c: &Confusion) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn matthews_corrcoef(c: &Confusion) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / denom
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fpr90: f64,
    pub fpr99: f64,
    pub f1: f64,
    pub mcc: f64,
}

impl Metrics {
    fn as_array(&self) -> [f64; 4] {
        [self.fpr90, self.fpr99, self.f1, self.mcc]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            fpr90: a[0],
            fpr99: a[1],
            f1: a[2],
            mcc: a[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: String,
    pub decision_threshold: f64,
    pub folds: Vec<FoldReport>,
    pub mean: Metrics,
    /// Population standard deviation across folds.
    pub std: Metrics,
}

fn fold_report(fold: usize, n_train: usize, scores: &[f64], labels: &[bool]) -> Result<FoldReport, ClassifyError> {
    if !(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)) {
        return Err(ClassifyError::SingleClass);
    }
    if scores.len() != labels.len() {
        return Err(ClassifyError::LengthMismatch(scores.len(), labels.len()));
    }
    let roc = roc_curve(scores, labels);
    let c = confusion(scores, labels, DECISION_THRESHOLD);
    Ok(FoldReport {
        fold,
        n_train,
        n_test: labels.len(),
        metrics: Metrics {
            fpr90: fpr_at_tpr(&roc, 0.90),
            fpr99: fpr_at_tpr(&roc, 0.99),
            f1: f1_score(&c),
            mcc: matthews_corrcoef(&c),
        },
        confusion: c,
        roc,
    })
}

impl EvalReport {
    fn from_folds(classifier: String, folds: Vec<FoldReport>) -> Self {
        let rows = Array2::from_shape_fn((folds.len(), 4), |(i, j)| folds[i].metrics.as_array()[j]);
        let mean = rows.mean_axis(Axis(0)).unwrap();
        let std = rows.std_axis(Axis(0), 0.0);
        Self {
            classifier,
            decision_threshold: DECISION_THRESHOLD,
            folds,
            mean: Metrics::from_array([mean[0], mean[1], mean[2], mean[3]]),
            std: Metrics::from_array([std[0], std[1], std[2], std[3]]),
        }
    }

    /// `fold,fpr,tpr,threshold` rows for every fold.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fold,fpr,tpr,threshold\n");
        for f in &self.folds {
            for p in &f.roc {
                writeln!(out, "{},{},{},{}", f.fold, p.fpr, p.tpr, p.threshold).unwrap();
            }
        }
        out
    }

    /// Plain-text table with one row per report and `mean ± std` cells.
    pub fn table(reports: &[EvalReport]) -> String {
        let mut out = format!("{:<14} {:>15} {:>15} {:>15} {:>15}\n", "Classifier", "FPR90", "FPR99", "F1", "MCC");
        for r in reports {
            let cell = |m: f64, s: f64| format!("{m:.3} ± {s:.3}");
            writeln!(
                out,
                "{:<14} {:>15} {:>15} {:>15} {:>15}",
                r.classifier,
                cell(r.mean.fpr90, r.std.fpr90),
                cell(r.mean.fpr99, r.std.fpr99),
                cell(r.mean.f1, r.std.f1),
                cell(r.mean.mcc, r.std.mcc),
            )
            .unwrap();
        }
        writeln!(out, "F1 and MCC at decision score > {DECISION_THRESHOLD}").unwrap();
        out
    }
}

/// Single-fold report for precomputed scores.
pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<EvalReport, ClassifyError> {
    Ok(EvalReport::from_folds("scores".into(), vec![fold_report(0, 0, scores, labels)?]))
}

/// Trains on each fold's complement and scores the held-out fold.
pub fn evaluate_cv(
    x: &Array2<f64>,
    y: &[bool],
    config: &ClassifierConfig,
    folds: &FoldAssignment,
) -> Result<EvalReport, ClassifyError> {
    if x.nrows() != y.len() || folds.assignment.len() != y.len() {
        return Err(ClassifyError::LengthMismatch(x.nrows(), y.len()));
    }
    let mut reports = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let (train_idx, test_idx) = fold_split(folds, fold);
        let y_train: Vec<bool> = train_idx.iter().map(|&i| y[i]).collect();
        let y_test: Vec<bool> = test_idx.iter().map(|&i| y[i]).collect();
        let model = train(&x.select(Axis(0), &train_idx), &y_train, config)?;
        let scores = model.decision_scores(&x.select(Axis(0), &test_idx))?;
        reports.push(fold_report(fold, train_idx.len(), &scores, &y_test)?);
    }
    Ok(EvalReport::from_folds(config.kind.to_string(), reports))
}
