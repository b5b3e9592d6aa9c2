use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use replica_lab::models::{DisorderSample, ModelSpec};
use replica_lab::par::{with_threads, worker_count};
use replica_lab::perturbation::TruncationPolicy;
use replica_lab::rng::SeedLineage;
use replica_lab::sampler::{sample_replicas, McmcConfig};

// Run with `--no-default-features` to time the sequential build.
fn replicas(c: &mut Criterion) {
    let lineage = SeedLineage::new(42);
    let spec = ModelSpec::Quadratic {
        m_ratio: 2.0,
        coupling_scale: 1.0,
    };
    let disorder = DisorderSample::draw(&spec, 64, 8.0, 1.0, &TruncationPolicy::default(), &lineage).unwrap();
    let mcmc = McmcConfig {
        burn_in: 20,
        samples: 50,
        ..McmcConfig::default()
    };
    let mut group = c.benchmark_group("sample_replicas");
    group.sample_size(10);
    let mut counts = vec![1];
    if worker_count() > 1 {
        counts.push(worker_count());
    }
    for threads in counts {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || sample_replicas(&disorder, 0.5, 16, &mcmc, &lineage).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, replicas);
criterion_main!(benches);
