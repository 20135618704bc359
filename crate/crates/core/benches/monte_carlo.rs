use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use drsma_core::experiment::{run_sweep, SweepSpec};
use drsma_core::par::ExecMode;
use drsma_core::{ScenarioConfig, Scheme};

fn small_config() -> ScenarioConfig {
    ScenarioConfig {
        num_leo: 2,
        num_gu: 2,
        num_lu: 2,
        group_sizes: vec![1, 1],
        geo_antennas: 2,
        leo_antennas: 2,
        max_iters: 30,
        randomizations: 10,
        ..ScenarioConfig::default()
    }
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        let mut spec = SweepSpec::single(small_config(), vec![Scheme::DRsma], 4);
        spec.exec = mode;
        group.bench_with_input(BenchmarkId::new("run_sweep", format!("{mode:?}")), &spec, |b, spec| {
            b.iter(|| run_sweep(spec).expect("sweep"))
        });
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
