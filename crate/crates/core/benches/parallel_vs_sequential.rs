use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pcbdet::cli::{evaluate_patches, load_training_data, RunConfig};
use pcbdet::data::to_sample;
use pcbdet::detector::{train_step, Detector};
use pcbdet::nn::optim::{AdamConfig, AdamState};
use pcbdet::par::Exec;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench(c: &mut Criterion) {
    let cfg = RunConfig::toy();
    let (train, val) = load_training_data(&cfg, Exec::Parallel).expect("toy data");
    let det = Detector::new(&cfg.detector).expect("toy detector");
    let store = det.init_params::<f32>(0).expect("init");
    let size = cfg.detector.input_size;
    let batch: Vec<_> = train[..cfg.batch_size].iter().map(|p| to_sample(&p.image, &p.record.annotations, size)).collect();
    let val = &val[..16.min(val.len())];

    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter_batched(
                || (store.clone(), AdamState::new()),
                |(mut st, mut state)| train_step(&det, &mut st, &mut state, &batch, 1e-3, &AdamConfig::default(), exec).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();

    let mut g = c.benchmark_group("batch_eval");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| b.iter(|| evaluate_patches(&det, &store, val, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
