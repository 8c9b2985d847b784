use std::hint::black_box;

use cdmagym_core::deploy::{InferenceEngine, ModelArtifact, NaiveEngine, PowerPolicy, Precision};
use cdmagym_core::{DdpgAgent, DdpgConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn default_actor() -> cdmagym_core::MlpParams {
    DdpgAgent::new(6, DdpgConfig::default(), 0.1, 5.0, 7).unwrap().actor
}

fn bench_infer(c: &mut Criterion) {
    let actor = default_actor();
    let input = [0.2, 0.55, 0.7, 1.0, 0.3, -1.0];
    let mut group = c.benchmark_group("infer");
    for precision in [Precision::F32, Precision::F64] {
        let artifact = ModelArtifact::new(&actor, 0.1, 5.0, precision).unwrap();
        let mut engine = InferenceEngine::from_artifact(&artifact).unwrap();
        group.bench_function(BenchmarkId::new("engine", precision.name()), |b| {
            b.iter(|| engine.infer(black_box(&input)).unwrap())
        });
        let mut naive = NaiveEngine::new(&artifact);
        group.bench_function(BenchmarkId::new("naive", precision.name()), |b| {
            b.iter(|| naive.infer(black_box(&input)).unwrap())
        });
    }
    group.bench_function("mlp_forward", |b| b.iter(|| actor.forward(black_box(&input)).unwrap()));
    group.finish();
}

fn bench_load(c: &mut Criterion) {
    let bytes = ModelArtifact::new(&default_actor(), 0.1, 5.0, Precision::F32)
        .unwrap()
        .to_bytes();
    c.bench_function("load_and_build", |b| {
        b.iter(|| {
            let a = ModelArtifact::from_bytes(black_box(&bytes)).unwrap();
            InferenceEngine::from_artifact(&a).unwrap()
        })
    });
}

criterion_group!(benches, bench_infer, bench_load);
criterion_main!(benches);
