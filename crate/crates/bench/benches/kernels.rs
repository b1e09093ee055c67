use std::hint::black_box;

use cardioscope_bench::bench_record;
use cardioscope_core::classifier::{loss_and_grad, Model, NetworkConfig, Tensor};
use cardioscope_core::dsp::{design_butterworth_lowpass, Filter};
use cardioscope_core::pipeline::Pipeline;
use cardioscope_core::rpeak::{detect_rpeaks, DetectorConfig};
use cardioscope_core::scalogram::{cwt, WaveletTable};
use cardioscope_core::PipelineConfig;
use criterion::{criterion_group, criterion_main, Criterion};

fn filtering(c: &mut Criterion) {
    let record = bench_record();
    let filter = design_butterworth_lowpass(6, 35.0, record.fs()).unwrap();
    c.bench_function("butterworth_30s", |b| b.iter(|| filter.apply(black_box(record.samples())).unwrap()));
    let pipeline = Pipeline::new(PipelineConfig::default()).unwrap();
    let filtered = pipeline.preprocess(&record).unwrap();
    let cfg = DetectorConfig::default();
    c.bench_function("detect_30s", |b| b.iter(|| detect_rpeaks(black_box(&filtered), &cfg).unwrap()));
}

fn scalogram(c: &mut Criterion) {
    let table = WaveletTable::db4(10).unwrap();
    let wave: Vec<f64> = (0..1024).map(|i| (i as f64 * 0.05).sin()).collect();
    let scales: Vec<f64> = (1..=64).map(f64::from).collect();
    c.bench_function("cwt_1024x64", |b| b.iter(|| cwt(black_box(&wave), 300.0, &scales, &table).unwrap()));
    let pipeline = Pipeline::new(PipelineConfig::default()).unwrap();
    let record = bench_record();
    c.bench_function("record_to_image", |b| b.iter(|| pipeline.image(black_box(&record)).unwrap()));
}

fn network(c: &mut Criterion) {
    let cfg = NetworkConfig::default();
    let model = Model::init(&cfg, 0).unwrap();
    let n = cfg.input_height * cfg.input_width;
    let images: Vec<Vec<f64>> = (0..4).map(|k| (0..n).map(|i| ((i * 7 + k) % 13) as f64 / 13.0).collect()).collect();
    let refs: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
    let batch = Tensor::from_images(&refs, cfg.input_height, cfg.input_width).unwrap();
    let labels = [0, 1, 2, 3];
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.bench_function("loss_and_grad_batch4", |b| {
        b.iter(|| loss_and_grad(&model, black_box(&batch), &labels).unwrap())
    });
    group.finish();
}

criterion_group!(benches, filtering, scalogram, network);
criterion_main!(benches);
