use std::hint::black_box;

use affectkit::autodiff::Graph;
use affectkit::metrics::ccc;
use affectkit::preprocess::{spectrogram, SpectrogramConfig};
use affectkit::SeriesPair;
use affectkit_bench::{gru_model, sequence_batch, series};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_ccc(c: &mut Criterion) {
    let mut group = c.benchmark_group("ccc");
    for n in [1_000, 100_000] {
        let x = series(n, 1);
        let y = series(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| ccc(SeriesPair::new(black_box(&x), black_box(&y)).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn bench_gru(c: &mut Criterion) {
    let (dim, hidden) = (16, 32);
    let model = gru_model(dim, hidden, 3);
    let batch = sequence_batch(8, 16, dim, 4);
    let mut group = c.benchmark_group("gru_8x16");
    group.bench_function("forward", |b| b.iter(|| model.predict(black_box(&batch)).unwrap()));
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = model
                .forward(&mut g, &bound, black_box(&batch), true, &mut rng)
                .unwrap();
            let va = out.predictions.va.expect("VA head");
            let loss = g.sum(va);
            g.backward(loss).unwrap()
        })
    });
    group.finish();
}

fn bench_spectrogram(c: &mut Criterion) {
    let cfg = SpectrogramConfig::default();
    let audio = series(44_100, 5);
    c.bench_function("spectrogram_1s_44k", |b| {
        b.iter(|| spectrogram(black_box(&audio), &cfg).unwrap())
    });
}

criterion_group!(benches, bench_ccc, bench_gru, bench_spectrogram);
criterion_main!(benches);
