use ndarray::{Array1, Array2};
use proptest::prelude::*;

use reqvec_core::classify::{
    confusion, evaluate, fpr_at_tpr, matthews_corrcoef, roc_curve, LinearKind, LinearModel, Model,
    DECISION_THRESHOLD,
};
use reqvec_core::corpus::{
    generate_synthetic_corpus, ids2018_sanitize, normalize_request, split_stratified_kfold, HttpRequestDoc, Label,
    NormalizationProfile, ProfileName, SynthSpec, PAYLOAD_TOKENS,
};
use reqvec_core::embedder::{Embedder, EmbeddingMatrix, EmbeddingVector, Pooling};
use reqvec_core::encoder::{init_encoder, EncoderConfig};
use reqvec_core::explain::{nearest_neighbors, token_ablation_scores};
use reqvec_core::tokenizer::BbpeVocab;

fn line() -> impl Strategy<Value = String> {
    prop_oneof![
        "[ -~]{0,40}",
        "[a-z/=?&\r\n]{0,20}",
        Just("GET /DVWA/vulnerabilities/xss/?q=1 HTTP/1.1".to_owned()),
        Just("Host: 10.0.0.1".to_owned()),
        Just("Upgrade-Insecure-Requests: 1".to_owned()),
        Just(String::new()),
    ]
}

fn request() -> impl Strategy<Value = HttpRequestDoc> {
    (prop::collection::vec(line(), 1..8), any::<bool>()).prop_map(|(lines, anomaly)| {
        let label = if anomaly { Label::Anomaly } else { Label::Normal };
        HttpRequestDoc::new("doc-1", label, lines, "prop")
    })
}

proptest! {
    #[test]
    fn normalization_is_idempotent(doc in request()) {
        for name in [ProfileName::Csic, ProfileName::Ids2018, ProfileName::UmpFirstline, ProfileName::Identity] {
            let profile = NormalizationProfile::new(name);
            let once = normalize_request(&doc, &profile);
            prop_assert_eq!(&normalize_request(&once, &profile), &once, "profile {}", name.as_str());
        }
    }

    #[test]
    fn sanitize_is_pure(doc in request(), seed in any::<u64>()) {
        let pool = vec!["a.example".to_owned(), "b.example".to_owned()];
        prop_assert_eq!(ids2018_sanitize(&doc, &pool, seed), ids2018_sanitize(&doc, &pool, seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_normals_carry_no_payload_tokens(seed in any::<u64>()) {
        let corpus = generate_synthetic_corpus(&SynthSpec::new(40, 40, seed)).unwrap();
        for doc in corpus.docs().iter().filter(|d| d.label == Label::Normal) {
            for token in PAYLOAD_TOKENS {
                prop_assert!(!doc.lines.iter().any(|l| l.contains(token)), "{} in {}", token, doc.id);
            }
        }
    }

    #[test]
    fn folds_are_disjoint_and_cover(n_pos in 5usize..40, n_neg in 5usize..40, seed in any::<u64>()) {
        let labels: Vec<Label> = (0..n_pos).map(|_| Label::Anomaly).chain((0..n_neg).map(|_| Label::Normal)).collect();
        let folds = split_stratified_kfold(&labels, 5, seed).unwrap();
        let mut seen = vec![0; labels.len()];
        for k in 0..5 {
            let test = folds.test_indices(k);
            let train = folds.train_indices(k);
            prop_assert!(test.iter().all(|i| !train.contains(i)));
            prop_assert_eq!(test.len() + train.len(), labels.len());
            test.iter().for_each(|&i| seen[i] += 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-3i32..=3, any::<bool>()), 2..40).prop_map(|v| {
        let scores = v.iter().map(|&(s, _)| s as f64 * 0.75).collect();
        let labels = v.iter().map(|&(_, l)| l).collect();
        (scores, labels)
    })
}

proptest! {
    #[test]
    fn roc_and_metric_invariants((scores, labels) in scored_labels()) {
        let roc = roc_curve(&scores, &labels);
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr && w[1].threshold < w[0].threshold);
        }
        prop_assert!(fpr_at_tpr(&roc, 0.99) >= fpr_at_tpr(&roc, 0.90));

        let m = evaluate(&scores, &labels).unwrap().mean;
        prop_assert!((-1.0..=1.0).contains(&m.mcc) && (0.0..=1.0).contains(&m.f1));
        let c = confusion(&scores, &labels, DECISION_THRESHOLD);
        let diagonal = c.fp == 0 && c.fn_ == 0;
        prop_assert_eq!(diagonal, (matthews_corrcoef(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decisions_survive_positive_rescaling(
        weights in prop::collection::vec(-2.0f64..2.0, 4),
        bias in -1.0f64..1.0,
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..20),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(weights.iter().any(|w| w.abs() > 1e-3));
        let base = Model::Linear(LinearModel::from_parts(LinearKind::Logreg, weights.clone(), bias));
        let scaled = Model::Linear(base.as_linear().unwrap().scaled(c));
        let x = Array2::from_shape_vec((rows.len(), 4), rows.concat()).unwrap();
        let a = base.decision_scores(&x).unwrap();
        let b = scaled.decision_scores(&x).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            prop_assert_eq!(*sa > DECISION_THRESHOLD, *sb > DECISION_THRESHOLD);
        }
        let la = base.as_linear().unwrap();
        let lb = scaled.as_linear().unwrap();
        for row in x.rows() {
            prop_assert!((la.signed_distance(row) - lb.signed_distance(row)).abs() < 1e-9);
        }
    }
}

fn tiny_embedder() -> Embedder {
    let vocab = BbpeVocab::from_merges(300, vec![]).unwrap();
    let config = EncoderConfig {
        num_layers: 4,
        num_heads: 2,
        hidden_size: 8,
        ffn_size: 16,
        max_seq_len: 48,
        vocab_size: 300,
        dropout: 0.0,
        mask_rate: 0.15,
        seed: 9,
    };
    Embedder::new(&init_encoder(&config).unwrap(), &vocab, Pooling::MeanTokens, true).unwrap()
}

fn short_lines() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z=&/ ]{1,12}", 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn request_vector_ignores_line_order(lines in short_lines(), rotate in 0usize..5) {
        let mut embedder = tiny_embedder();
        let doc = HttpRequestDoc::new("a", Label::Normal, lines.clone(), "prop");
        let mut shuffled = lines;
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        let other = HttpRequestDoc::new("a", Label::Normal, shuffled, "prop");
        let x = embedder.embed_request_f64(&doc).unwrap();
        let y = embedder.embed_request_f64(&other).unwrap();
        prop_assert_eq!(x.len(), 4 * 8);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attribution_scores_are_mean_deviations(lines in short_lines(), weights in prop::collection::vec(-1.0f64..1.0, 32)) {
        prop_assume!(weights.iter().any(|w| w.abs() > 1e-3));
        let mut embedder = tiny_embedder();
        let model = Model::Linear(LinearModel::from_parts(LinearKind::Logreg, weights, 0.2));
        let doc = HttpRequestDoc::new("a", Label::Anomaly, lines, "prop");
        let report = token_ablation_scores(&mut embedder, &model, &doc).unwrap();
        let sum: f64 = report.entries.iter().map(|e| e.score).sum();
        prop_assert!(sum.abs() < 1e-9);
        prop_assert!(report.entries.iter().all(|e| (0.0..=1.0).contains(&e.scaled)));
        let ids: std::collections::BTreeSet<_> = report.entries.iter().map(|e| e.token_id).collect();
        prop_assert_eq!(ids.len(), report.entries.len());
    }

    #[test]
    fn neighbour_distances_are_sorted(values in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 6), 3..30), n in 1usize..30) {
        let rows: Vec<EmbeddingVector> = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| EmbeddingVector { doc_id: format!("r{i}"), label: Label::Unlabeled, values: v })
            .collect();
        let n = n.min(rows.len() - 1);
        let matrix = EmbeddingMatrix::new(rows, 6, String::new()).unwrap();
        let list = nearest_neighbors(&matrix, "r0", n, false).unwrap();
        prop_assert_eq!(list.neighbors.len(), n);
        prop_assert!(list.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
        prop_assert!(list.neighbors.iter().all(|nb| nb.doc_id != "r0"));
        let q = Array1::from(matrix.rows[0].values.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let far = matrix.rows.iter().skip(1).map(|r| {
            let v = Array1::from(r.values.iter().map(|&v| v as f64).collect::<Vec<_>>());
            (&v - &q).mapv(|d| d * d).sum().sqrt()
        }).fold(0.0, f64::max);
        prop_assert!(list.neighbors.last().unwrap().distance <= far + 1e-12);
    }
}
