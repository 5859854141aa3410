//! Parallel vs sequential paths of the data-parallel kernels.
//!
//! Both arms run in one binary: the sequential arm wraps the call in
//! `par::sequential`. Build with `--no-default-features` to drop rayon
//! entirely, in which case the two arms coincide.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use fusion_core::data_io::{embed_dataset_baseline, generate_synthetic_glyphs};
use fusion_core::network::{fen_backward, fen_forward_cached, init_params, ArchConfig};
use fusion_core::par;
use fusion_core::tasks::kmeans_partition;

fn arms<R>(c: &mut Criterion, group: &str, mut f: impl FnMut() -> R) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function("rayon", |b| b.iter(|| black_box(f())));
    g.bench_function("sequential", |b| {
        b.iter(|| par::sequential(|| black_box(f())))
    });
    g.finish();
}

fn fen(c: &mut Criterion) {
    let arch = ArchConfig {
        conv_width: 16,
        ..ArchConfig::default()
    };
    let p = init_params(&arch, 0).unwrap();
    let ds = generate_synthetic_glyphs(8, 8, 28, 0).unwrap();
    let xs: Vec<Arc<[f64]>> = ds.images().to_vec();
    arms(c, "fen_forward_64", || fen_forward_cached(&p, &xs).unwrap().0);
    let (feats, cache) = fen_forward_cached(&p, &xs).unwrap();
    let d = vec![1.0; feats.data.len()];
    arms(c, "fen_backward_64", || fen_backward(&p, &cache, &d).unwrap());
}

fn clustering(c: &mut Criterion) {
    let ds = generate_synthetic_glyphs(30, 20, 28, 0).unwrap();
    let emb = embed_dataset_baseline(&ds, 64, 0).unwrap();
    arms(c, "kmeans_600x64_k30", || kmeans_partition(&emb, 30, 1, 50).unwrap());
    arms(c, "baseline_embedding_600", || embed_dataset_baseline(&ds, 64, 0).unwrap());
}

fn glyphs(c: &mut Criterion) {
    arms(c, "glyphs_40x20", || generate_synthetic_glyphs(40, 20, 28, 3).unwrap());
}

criterion_group!(benches, fen, clustering, glyphs);
criterion_main!(benches);
