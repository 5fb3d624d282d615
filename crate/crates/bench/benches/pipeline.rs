use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use predsense_bench::frames;
use predsense_core::memory::{MemoryConfig, MemoryEngine};
use predsense_core::predictor::{loss_and_gradient, PredictorModel, SurpriseEstimator};
use predsense_core::segmentation::{process_stream, OracleCounter, SegmentConfig};
use predsense_core::simulator::StreamGenerator;
use predsense_core::FeatureVector;

fn predictor(c: &mut Criterion) {
    let stream = frames(2, 64, 64);
    let (x, y) = (&stream[0].grid, &stream[1].grid);
    let linear = PredictorModel::linear(64, 1);
    let mlp = PredictorModel::two_layer(64, 64, 1);

    let mut g = c.benchmark_group("predictor");
    g.bench_function("linear_predict_64x64", |b| b.iter(|| linear.predict_next(black_box(x)).unwrap()));
    g.bench_function("two_layer_predict_64x64", |b| b.iter(|| mlp.predict_next(black_box(x)).unwrap()));
    g.bench_function("linear_gradient_64x64", |b| b.iter(|| loss_and_gradient(&linear, black_box(&[(x, y)])).unwrap()));
    g.finish();
}

fn memory(c: &mut Criterion) {
    let stream = frames(1_000, 64, 64);
    let est = SurpriseEstimator::prediction_error(PredictorModel::linear_identity(64));
    let cfg = MemoryConfig {
        sensory_budget: 16,
        token_budget: 32_768,
        threshold: 0.05,
        ..Default::default()
    };

    let mut g = c.benchmark_group("memory");
    g.throughput(Throughput::Elements(stream.len() as u64));
    g.sample_size(10);
    g.bench_function("ingest_1k_frames", |b| {
        b.iter_batched(
            || (MemoryEngine::new(cfg.clone(), est.clone()).unwrap(), stream.clone()),
            |(mut engine, frames)| {
                for f in frames {
                    engine.ingest(f).unwrap();
                }
                engine.peak_token_count()
            },
            BatchSize::LargeInput,
        )
    });

    let mut engine = MemoryEngine::new(cfg.clone(), est).unwrap();
    for f in stream.iter().cloned() {
        engine.ingest(f).unwrap();
    }
    let query = FeatureVector::new(vec![0.1; 64]).unwrap();
    g.throughput(Throughput::Elements(1));
    g.sample_size(50);
    g.bench_function("retrieve_top8", |b| b.iter(|| engine.retrieve(black_box(&query), 8).unwrap()));
    g.finish();
}

fn segmentation(c: &mut Criterion) {
    let stream = frames(1_800, 32, 16);
    let est = SurpriseEstimator::prediction_error(PredictorModel::linear_identity(32));
    let mut g = c.benchmark_group("segmentation");
    g.throughput(Throughput::Elements(stream.len() as u64));
    g.sample_size(10);
    g.bench_function("process_stream_1800", |b| {
        b.iter(|| process_stream(SegmentConfig::default(), OracleCounter::new("chair"), est.clone(), black_box(&stream)).unwrap())
    });
    g.finish();
}

fn generator(c: &mut Criterion) {
    let spec = predsense_bench::scene_stream(600, 32, 16);
    let mut g = c.benchmark_group("simulator");
    g.throughput(Throughput::Elements(600));
    g.sample_size(20);
    g.bench_function("generate_600_frames", |b| b.iter(|| StreamGenerator::new(spec.clone()).unwrap().count()));
    g.finish();
}

criterion_group!(benches, predictor, memory, segmentation, generator);
criterion_main!(benches);
