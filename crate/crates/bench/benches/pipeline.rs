use criterion::{criterion_group, criterion_main, Criterion};
use drumscribe_bench::{activations, toy_mix};
use drumscribe_core::eval::match_onsets;
use drumscribe_core::model::{desk_cnn, desk_crnn};
use drumscribe_core::peakpick::onsets_from_activations;
use drumscribe_core::{FeatureConfig, FeatureExtractor, Network, SchemaName};
use std::hint::black_box;

fn features(c: &mut Criterion) {
    let audio = toy_mix(10.0);
    let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    c.bench_function("featurize 10 s", |b| b.iter(|| fx.extract(black_box(&audio)).unwrap()));
}

fn inference(c: &mut Criterion) {
    let audio = toy_mix(10.0);
    let f = FeatureExtractor::new(FeatureConfig::default()).unwrap().extract(&audio).unwrap();
    let mut crnn = Network::<f32>::new(desk_crnn(8), 0).unwrap();
    c.bench_function("desk crnn predict 10 s", |b| b.iter(|| crnn.predict(black_box(&f)).unwrap()));
    let mut cnn = Network::<f32>::new(desk_cnn(8), 0).unwrap();
    c.bench_function("desk cnn predict 10 s", |b| b.iter(|| cnn.predict(black_box(&f)).unwrap()));
}

fn picking_and_matching(c: &mut Criterion) {
    let act = activations(6000, 8);
    let classes = SchemaName::Eight.classes();
    let p = drumscribe_core::PeakParams::default();
    c.bench_function("peak pick 60 s x 8", |b| b.iter(|| onsets_from_activations(black_box(&act), &classes, &p).unwrap()));
    let dets: Vec<f64> = (0..2000).map(|i| i as f64 * 0.05 + 0.003).collect();
    let refs: Vec<f64> = (0..2000).map(|i| i as f64 * 0.05).collect();
    c.bench_function("match 2000 onsets", |b| b.iter(|| match_onsets(black_box(&dets), &refs, 0.02)));
}

criterion_group!(benches, features, inference, picking_and_matching);
criterion_main!(benches);
