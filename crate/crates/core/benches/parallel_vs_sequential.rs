use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use imprint_core::data::{Example, Target};
use imprint_core::nn::{ModelSpec, ParamSet, Task};
use imprint_core::parallel::Parallelism;
use imprint_core::rng::seeded;
use imprint_core::train::{Checkpoint, CheckpointSet};
use imprint_core::trajectory::{batch_extract, SynthesisMode};
use imprint_core::Tensor;

fn fixture() -> (CheckpointSet, Vec<Example>) {
    let spec = ModelSpec::mlp(64, &[32], 4, Task::Classification).unwrap();
    let checkpoints = (1..=30)
        .map(|e| Checkpoint {
            epoch: e,
            params: Arc::new(ParamSet::init(&spec, e as u64)),
        })
        .collect();
    let set = CheckpointSet::new(spec, checkpoints, 30).unwrap();
    let mut rng = seeded(7, "bench-inputs");
    let examples = (0..256)
        .map(|id| Example {
            id,
            x: Tensor::vector((0..64).map(|_| rng.random::<f32>()).collect()),
            target: Target::Class(id % 4),
        })
        .collect();
    (set, examples)
}

fn extraction(c: &mut Criterion) {
    let (set, examples) = fixture();
    let mut group = c.benchmark_group("batch_extract_256x30");
    group.bench_function("sequential", |b| {
        b.iter(|| batch_extract(&set, black_box(&examples), SynthesisMode::Anchored, Parallelism::SEQUENTIAL).unwrap())
    });
    group.bench_function("rayon", |b| {
        b.iter(|| batch_extract(&set, black_box(&examples), SynthesisMode::Anchored, Parallelism::AUTO).unwrap())
    });
    group.finish();
}

criterion_group!(benches, extraction);
criterion_main!(benches);
