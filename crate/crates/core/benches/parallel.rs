use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use e2mc_core::eval::evaluate_task;
use e2mc_core::model::{DualEncoderModel, ModelConfig};
use e2mc_core::numeric::{Parallelism, RngStream};
use e2mc_core::stream::{synthesize_stream, GeneratorSpec, Note, TaskStream};

fn setup() -> (TaskStream, DualEncoderModel) {
    let spec = GeneratorSpec {
        num_classes: 8,
        num_tasks: 2,
        notes_per_class: 40,
        ..GeneratorSpec::default()
    };
    let stream = synthesize_stream(&spec, &mut RngStream::new(0).derive("stream", &[])).unwrap();
    let config = ModelConfig {
        embed_dim: 32,
        hidden: 32,
        ..ModelConfig::default()
    };
    let mut rng = RngStream::new(0).derive("init", &[]);
    let mut model = DualEncoderModel::new(config, stream.char_vocab.len(), stream.lexicon.len(), &mut rng).unwrap();
    model.expand_classifier(4, &mut rng).unwrap();
    (stream, model)
}

fn modes() -> [(&'static str, Parallelism); 2] {
    [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)]
}

fn batch_gradient(c: &mut Criterion) {
    let (stream, model) = setup();
    let batch: Vec<&Note> = stream.tasks[0].train.iter().take(64).collect();
    let mut group = c.benchmark_group("batch_gradient");
    for (name, par) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| model.batch_gradient(&batch, par).unwrap())
        });
    }
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let (stream, model) = setup();
    let test = &stream.tasks[0].test;
    let mut group = c.benchmark_group("evaluate_task");
    for (name, par) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| evaluate_task(&model, test, par).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = batch_gradient, evaluate
}
criterion_main!(benches);
