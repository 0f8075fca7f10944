use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use reqvec_core::corpus::{generate_synthetic_corpus, Corpus, Label, SynthSpec};
use reqvec_core::embedder::{EmbeddingMatrix, EmbeddingVector};
use reqvec_core::encoder::{init_encoder, Encoder, EncoderConfig};
use reqvec_core::explain::nearest_neighbors;
use reqvec_core::project::{tsne_array, ProjectionConfig};
use reqvec_core::tokenizer::{train_bbpe_on_corpora, TokenizerConfig};

fn corpus() -> Corpus {
    generate_synthetic_corpus(&SynthSpec::new(200, 50, 1)).unwrap()
}

fn tokenizer(c: &mut Criterion) {
    let corpus = corpus();
    let vocab = train_bbpe_on_corpora(&[&corpus], &TokenizerConfig { vocab_size: 1000, seed: 0 }).unwrap();
    let lines: Vec<&str> = corpus.docs().iter().flat_map(|d| d.lines.iter().map(String::as_str)).collect();
    c.bench_function("tokenizer/encode_corpus", |b| {
        b.iter(|| lines.iter().map(|l| vocab.encode(black_box(l), true).len()).sum::<usize>())
    });
}

fn encoder(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder/forward");
    let params = init_encoder(&EncoderConfig::desk(1000)).unwrap();
    let encoder = Encoder::new(&params);
    for len in [16usize, 64, 128] {
        let ids: Vec<u32> = (0..len as u32).map(|i| 4 + i % 900).collect();
        group.bench_with_input(BenchmarkId::from_parameter(len), &ids, |b, ids| {
            b.iter(|| encoder.hidden_states(black_box(ids)).unwrap())
        });
    }
    group.finish();
}

fn points(n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |(i, j)| ((i * 31 + j * 17) % 97) as f64 / 97.0 + (i % 3 * 5) as f64)
}

fn projection(c: &mut Criterion) {
    let x = points(150, 20);
    let ids: Vec<String> = (0..150).map(|i| format!("p{i:03}")).collect();
    let config = ProjectionConfig {
        iterations: 250,
        ..ProjectionConfig::default()
    };
    let mut group = c.benchmark_group("tsne");
    group.sample_size(10);
    group.bench_function("n150_250iter", |b| b.iter(|| tsne_array(black_box(&x), &ids, &config).unwrap()));
    group.finish();
}

fn neighbors(c: &mut Criterion) {
    let x = points(1000, 128);
    let rows = x
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| EmbeddingVector {
            doc_id: format!("d{i:04}"),
            label: Label::Unlabeled,
            values: r.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    let matrix = EmbeddingMatrix::new(rows, 128, String::new()).unwrap();
    c.bench_function("neighbors/n1000_d128_k10", |b| {
        b.iter(|| nearest_neighbors(black_box(&matrix), "d0500", 10, false).unwrap())
    });
}

criterion_group!(benches, tokenizer, encoder, projection, neighbors);
criterion_main!(benches);
