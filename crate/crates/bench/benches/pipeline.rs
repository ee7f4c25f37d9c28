use std::hint::black_box;

use adrsig_core::detect::{measure, DetectionConfig};
use adrsig_core::ingest::generate_synthetic;
use adrsig_core::predictor::{design_matrix, loss_and_grads, PredictorConfig, PredictorParams};
use adrsig_core::signal::compare;
use adrsig_core::split::{preprocess, split_uniform};
use adrsig_core::{Dataset, FeatureSchema, Rng};
use criterion::{criterion_group, criterion_main, Criterion};

fn corpus(size: usize) -> Dataset {
    let (d, _) = generate_synthetic(size, 10, &FeatureSchema::default_faers(), &mut Rng::new(1));
    preprocess(&d).expect("synthetic corpus preprocesses").0
}

fn detection(c: &mut Criterion) {
    let split = split_uniform(&corpus(5868), 3, &mut Rng::new(2)).expect("non-empty corpus");
    let cfg = DetectionConfig::default();
    c.bench_function("detection round, 5868 records", |b| {
        b.iter(|| measure(black_box(&split), &cfg).unwrap())
    });
}

fn predictor(c: &mut Criterion) {
    let d = corpus(600);
    let batch = d.with_records(d.records[..64].to_vec());
    let cfg = PredictorConfig::for_classes(10);
    let (x, y) = design_matrix(&batch, 10).unwrap();
    let p = PredictorParams::init(&cfg, x.ncols(), &mut Rng::new(3));
    c.bench_function("predictor forward+backward, 64 records", |b| {
        b.iter(|| loss_and_grads(black_box(&p), &cfg, x.view(), &y, None).unwrap())
    });
}

fn disproportionality(c: &mut Criterion) {
    let d = corpus(5868);
    let half = d.with_records(d.records.iter().step_by(2).cloned().collect());
    c.bench_function("ROR/PRR comparison, 5868 records", |b| {
        b.iter(|| compare(black_box(&d), &half).unwrap())
    });
}

criterion_group!(benches, detection, predictor, disproportionality);
criterion_main!(benches);
