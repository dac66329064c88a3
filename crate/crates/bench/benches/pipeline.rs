use std::hint::black_box;

use amd_core::conditioning::{embed_text, SegmentContext};
use amd_core::corpus::{generate_corpus, CorpusConfig};
use amd_core::metrics::{feature_matrix, fid, DeterministicFeatures};
use amd_core::rng::{seeded, standard_normal};
use amd_core::{
    geometric_losses, init_denoiser, recover_positions, DenoiserConfig, LossWeights, SkeletonSpec,
    FEATURE_DIM,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_denoiser(c: &mut Criterion) {
    let model = init_denoiser(DenoiserConfig::desk(), 1).unwrap();
    let text = embed_text("a person kicks with the left leg", model.text_dim());
    let ctx = SegmentContext::first(&text);
    let x = standard_normal(&mut seeded(2), 80, FEATURE_DIM);
    c.bench_function("denoiser forward, desk, 80 frames", |b| {
        b.iter(|| {
            model
                .predict_clean(black_box(&ctx), black_box(&x), 50, false)
                .unwrap()
        })
    });
}

fn bench_kinematics(c: &mut Criterion) {
    let corpus = generate_corpus(&CorpusConfig::new(2, 3)).unwrap();
    let (a, b2) = (&corpus.records[0].clip, &corpus.records[1].clip);
    let sk = SkeletonSpec::default();
    let w = LossWeights::default();
    let n = a.n_frames().min(b2.n_frames());
    let (a, b2) = (a.slice(0..n), b2.slice(0..n));
    c.bench_function("recover positions", |b| {
        b.iter(|| recover_positions(black_box(&a), &sk).unwrap())
    });
    c.bench_function("geometric losses", |b| {
        b.iter(|| geometric_losses(black_box(&a), black_box(&b2), &sk, &w).unwrap())
    });
}

fn bench_fid(c: &mut Criterion) {
    let corpus = generate_corpus(&CorpusConfig::new(64, 4)).unwrap();
    let det = DeterministicFeatures::default();
    let clips: Vec<_> = corpus.records.iter().map(|r| &r.clip).collect();
    let real = feature_matrix(&clips[..32], |c| det.extract(c)).unwrap();
    let gen = feature_matrix(&clips[32..], |c| det.extract(c)).unwrap();
    c.bench_function("fid, 32 x 32 features", |b| {
        b.iter(|| fid(black_box(&real), black_box(&gen)).unwrap())
    });
}

criterion_group!(benches, bench_denoiser, bench_kinematics, bench_fid);
criterion_main!(benches);
