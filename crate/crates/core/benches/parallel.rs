use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lautum::config::ExperimentConfig;
use lautum::data::SyntheticShiftSpec;
use lautum::par::Exec;
use lautum::pipeline::run_sweep;
use lautum::verify::{decomposition_suite, monte_carlo_lautum, random_blocks};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn monte_carlo(c: &mut Criterion) {
    let blocks = random_blocks(&mut ChaCha8Rng::seed_from_u64(1), 5, 1).unwrap();
    let mut g = c.benchmark_group("monte_carlo_200k");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| monte_carlo_lautum(black_box(&blocks), 200_000, 0, exec).unwrap())
        });
    }
    g.finish();
}

fn decomposition(c: &mut Criterion) {
    let mut g = c.benchmark_group("decomposition_1000");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| decomposition_suite(black_box(1000), 0, exec).unwrap())
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        output: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    if let lautum::config::DataSource::Synthetic { spec, .. } = &mut cfg.data {
        *spec = SyntheticShiftSpec {
            train_per_class: 100,
            test_per_class: 50,
            ..SyntheticShiftSpec::default()
        };
    }
    cfg.pretrain.epochs = 3;
    cfg.finetune.epochs = 3;
    let mut g = c.benchmark_group("sweep_2x4");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_sweep(&cfg, &[0.0, 1e-2], &[0, 1, 2, 3], exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo, decomposition, sweep);
criterion_main!(benches);
